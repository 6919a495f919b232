use thiserror::Error;

/// Errors raised anywhere in the adaptation lab.
#[derive(Debug, Error)]
pub enum PaidError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate neuron: column {column} has norm {norm:e}")]
    DegenerateNeuron { column: usize, norm: f64 },

    #[error("singular hyperspherical energy: columns {i} and {j} are {distance:e} apart")]
    SingularEnergy { i: usize, j: usize, distance: f64 },

    #[error("degenerate reflector: vector {index} has norm {norm:e}")]
    DegenerateReflector { index: usize, norm: f64 },

    #[error("gradient oracle: {0}")]
    Oracle(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PaidError {
    /// Process exit code: 2 config, 3 numeric, 4 I/O or integrity.
    pub fn exit_code(&self) -> i32 {
        match self {
            PaidError::Config(_) => 2,
            PaidError::Io(_) | PaidError::Integrity(_) => 4,
            _ => 3,
        }
    }
}

impl From<csv::Error> for PaidError {
    fn from(e: csv::Error) -> Self {
        PaidError::Io(std::io::Error::other(e))
    }
}

pub type Result<T> = std::result::Result<T, PaidError>;
