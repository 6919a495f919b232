use serde::{Deserialize, Serialize};

use crate::error::{PaidError, Result};
use crate::nnmodel::Network;
use crate::numkit::{batch_mean_std, vec_norm, Matrix};

/// Per-dimension mean and standard deviation of source features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub n_samples: usize,
}

impl SourceStats {
    /// Statistics of a feature matrix, two-pass, population std.
    pub fn from_features(z: &Matrix) -> Result<Self> {
        let (mu, sigma) = batch_mean_std(z)?;
        Ok(Self {
            mu,
            sigma,
            n_samples: z.rows(),
        })
    }
}

/// Feature statistics of the network over all source batches.
pub fn compute_source_stats(net: &Network, source_batches: &[Matrix]) -> Result<SourceStats> {
    let total: usize = source_batches.iter().map(Matrix::rows).sum();
    if total < 2 {
        return Err(PaidError::Config(format!(
            "source statistics need at least 2 samples, got {total}"
        )));
    }
    let mut feats: Option<Matrix> = None;
    let mut data = Vec::new();
    for b in source_batches.iter().filter(|b| b.rows() > 0) {
        let z = net.forward_features(b)?;
        data.extend_from_slice(z.data());
        feats.get_or_insert(z);
    }
    let cols = feats.map_or(0, |z| z.cols());
    SourceStats::from_features(&Matrix::from_vec(total, cols, data)?)
}

/// Value and input gradient of the alignment loss.
#[derive(Clone, Debug)]
pub struct AlignmentLoss {
    pub loss: f64,
    pub dz: Matrix,
    /// Set when the batch was too small for a standard deviation and only
    /// the mean term was used.
    pub sigma_skipped: bool,
}

/// `‖μ_s − μ_t‖₂ + λ‖σ_s − σ_t‖₂` over the batch `z`, with its exact gradient.
/// Single-sample batches fall back to the mean term alone.
pub fn alignment_loss(stats: &SourceStats, z: &Matrix, lambda: f64) -> Result<AlignmentLoss> {
    let (b, d) = z.shape();
    if d != stats.mu.len() {
        return Err(PaidError::Shape(format!(
            "features have {d} dims, source statistics {}",
            stats.mu.len()
        )));
    }
    let (mu, sigma) = batch_mean_std(z)?;
    let n = b as f64;

    let mean_gap: Vec<f64> = mu.iter().zip(&stats.mu).map(|(t, s)| t - s).collect();
    let mean_norm = vec_norm(&mean_gap);
    let g_mu: Vec<f64> = if mean_norm > 0.0 {
        mean_gap.iter().map(|g| g / mean_norm).collect()
    } else {
        vec![0.0; d]
    };

    let sigma_skipped = b < 2;
    let (std_norm, g_sigma) = if sigma_skipped {
        (0.0, vec![0.0; d])
    } else {
        let gap: Vec<f64> = sigma.iter().zip(&stats.sigma).map(|(t, s)| t - s).collect();
        let norm = vec_norm(&gap);
        let g = if norm > 0.0 {
            gap.iter().map(|v| lambda * v / norm).collect()
        } else {
            vec![0.0; d]
        };
        (norm, g)
    };

    let mut dz = Matrix::zeros(b, d);
    for i in 0..b {
        for (j, out) in dz.row_mut(i).iter_mut().enumerate() {
            // ∂σ_j/∂z_ij = (z_ij − μ_j) / (B σ_j)
            *out = (g_mu[j] + g_sigma[j] * (z[(i, j)] - mu[j]) / sigma[j]) / n;
        }
    }
    Ok(AlignmentLoss {
        loss: mean_norm + lambda * std_norm,
        dz,
        sigma_skipped,
    })
}
