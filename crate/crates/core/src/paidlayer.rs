//! Linear layer adapted by magnitude rescaling and a shared rotation of its
//! frozen unit neuron directions.
//!
//! The effective weight is `W_eff[:, j] = m_j · O · d_j`: every neuron column
//! is rotated by the same orthogonal `O` (acting on the input side), so unit
//! norms and the column Gram matrix of the directions survive any update of
//! the chain. Which pieces are learnable is selected by [`UpdateMode`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PaidError, Result};
use crate::geometry::{self, decompose, pairwise_gram, scale_columns};
use crate::householder::HouseholderChain;
use crate::numkit::{matmul, matmul_nt, matmul_tn, Matrix, SeededRng};

/// Which parts of a [`PaidLinear`] receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    Frozen,
    /// Setting 1: per-neuron magnitudes only.
    MagnitudeOnly,
    /// Setting 2: raw direction entries, no renormalization.
    DirectionFree,
    /// Setting 3: shared rotation of the directions.
    DirectionOrthogonal,
    /// Setting 4: magnitudes and raw directions.
    MagDirFree,
    /// Setting 5: magnitudes and shared rotation.
    Paid,
}

impl UpdateMode {
    pub const ALL: [UpdateMode; 6] = [
        UpdateMode::Frozen,
        UpdateMode::MagnitudeOnly,
        UpdateMode::DirectionFree,
        UpdateMode::DirectionOrthogonal,
        UpdateMode::MagDirFree,
        UpdateMode::Paid,
    ];

    pub fn uses_chain(self) -> bool {
        matches!(self, UpdateMode::DirectionOrthogonal | UpdateMode::Paid)
    }

    pub fn learns_magnitude(self) -> bool {
        matches!(
            self,
            UpdateMode::MagnitudeOnly | UpdateMode::MagDirFree | UpdateMode::Paid
        )
    }

    pub fn learns_direction(self) -> bool {
        matches!(self, UpdateMode::DirectionFree | UpdateMode::MagDirFree)
    }

    /// Modes whose adaptation keeps the pairwise angular structure intact.
    pub fn preserves_structure(self) -> bool {
        !self.learns_direction()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UpdateMode::Frozen => "frozen",
            UpdateMode::MagnitudeOnly => "magnitude-only",
            UpdateMode::DirectionFree => "direction-free",
            UpdateMode::DirectionOrthogonal => "direction-orthogonal",
            UpdateMode::MagDirFree => "mag-dir-free",
            UpdateMode::Paid => "paid",
        }
    }
}

impl fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpdateMode {
    type Err = PaidError;

    fn from_str(s: &str) -> Result<Self> {
        UpdateMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                PaidError::Config(format!(
                    "unknown mode {s:?}; expected one of {}",
                    UpdateMode::ALL.map(|m| m.as_str()).join(", ")
                ))
            })
    }
}

/// Gradients for whatever the current mode makes learnable.
#[derive(Clone, Debug, Default)]
pub struct LayerGrads {
    pub magnitude: Option<Vec<f64>>,
    pub direction: Option<Matrix>,
    pub chain: Option<Vec<Vec<f64>>>,
}

impl LayerGrads {
    /// Flattened `(name, gradient)` pairs, in the same order as
    /// [`PaidLinear::learnable_params_mut`].
    pub fn into_named(self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        if let Some(m) = self.magnitude {
            out.push(("magnitude".to_string(), m));
        }
        if let Some(d) = self.direction {
            out.push(("direction".to_string(), d.into_data()));
        }
        if let Some(c) = self.chain {
            for (i, v) in c.into_iter().enumerate() {
                out.push((format!("chain.{i}"), v));
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
struct ForwardCache {
    input: Matrix,
    /// `O·D` (or `D` in chain-free modes).
    rotated: Matrix,
    weight: Matrix,
}

#[derive(Clone, Debug)]
pub struct PaidLinear {
    in_dim: usize,
    out_dim: usize,
    pub magnitude: Vec<f64>,
    pub direction: Matrix,
    pub chain: Option<HouseholderChain>,
    pub bias: Vec<f64>,
    mode: UpdateMode,
    pretrained: Matrix,
    initial_direction: Matrix,
    cache: Option<ForwardCache>,
}

impl PaidLinear {
    /// Wraps a pre-trained `in_dim × out_dim` weight. Chain modes start from
    /// an identity chain of `r` reflections so the layer is unchanged.
    pub fn from_pretrained(
        w: &Matrix,
        bias: Vec<f64>,
        mode: UpdateMode,
        r: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let (in_dim, out_dim) = w.shape();
        if bias.len() != out_dim {
            return Err(PaidError::Shape(format!(
                "bias of length {} for {out_dim} outputs",
                bias.len()
            )));
        }
        let dw = decompose(w)?;
        let chain = if mode.uses_chain() {
            Some(HouseholderChain::init_identity(in_dim, r, rng)?)
        } else {
            None
        };
        Ok(Self {
            in_dim,
            out_dim,
            magnitude: dw.magnitude,
            initial_direction: dw.direction.clone(),
            direction: dw.direction,
            chain,
            bias,
            mode,
            pretrained: w.clone(),
            cache: None,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn mode(&self) -> UpdateMode {
        self.mode
    }

    pub fn pretrained(&self) -> &Matrix {
        &self.pretrained
    }

    pub fn initial_direction(&self) -> &Matrix {
        &self.initial_direction
    }

    fn rotated_direction(&self) -> Result<Matrix> {
        match &self.chain {
            Some(chain) => chain.apply(&self.direction),
            None => Ok(self.direction.clone()),
        }
    }

    pub fn effective_weight(&self) -> Result<Matrix> {
        if self.mode == UpdateMode::Frozen {
            return Ok(self.pretrained.clone());
        }
        Ok(scale_columns(&self.rotated_direction()?, &self.magnitude))
    }

    /// `y = x·W_eff + bias`; caches what [`backward`](Self::backward) needs.
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim {
            return Err(PaidError::Shape(format!(
                "layer expects {} inputs, got {}",
                self.in_dim,
                x.cols()
            )));
        }
        let rotated = self.rotated_direction()?;
        let weight = if self.mode == UpdateMode::Frozen {
            self.pretrained.clone()
        } else {
            scale_columns(&rotated, &self.magnitude)
        };
        let mut y = matmul(x, &weight)?;
        y.add_row_vector(&self.bias);
        self.cache = Some(ForwardCache {
            input: x.clone(),
            rotated,
            weight,
        });
        Ok(y)
    }

    /// Forward pass that leaves the cache untouched.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = matmul(x, &self.effective_weight()?)?;
        y.add_row_vector(&self.bias);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Matrix) -> Result<(LayerGrads, Matrix)> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| PaidError::State("backward called before forward".into()))?;
        dy.expect_shape((cache.input.rows(), self.out_dim), "layer upstream")?;
        let dx = matmul_nt(dy, &cache.weight)?;
        let mut grads = LayerGrads::default();
        if self.mode == UpdateMode::Frozen {
            return Ok((grads, dx));
        }
        let dw = matmul_tn(&cache.input, dy)?;
        if self.mode.learns_magnitude() {
            let mut dm = vec![0.0; self.out_dim];
            for (dw_row, r_row) in dw
                .data()
                .chunks(self.out_dim)
                .zip(cache.rotated.data().chunks(self.out_dim))
            {
                dm.iter_mut()
                    .zip(dw_row.iter().zip(r_row))
                    .for_each(|(g, (a, b))| *g += a * b);
            }
            grads.magnitude = Some(dm);
        }
        let d_rotated = scale_columns(&dw, &self.magnitude);
        if self.mode.learns_direction() {
            grads.direction = Some(d_rotated);
        } else if let Some(chain) = &self.chain {
            grads.chain = Some(chain.grad(&self.direction, &d_rotated)?.vectors);
        }
        Ok((grads, dx))
    }

    /// Learnable tensors, named relative to the layer.
    pub fn learnable_params_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        if self.mode.learns_magnitude() {
            out.push(("magnitude".into(), &mut self.magnitude));
        }
        if self.mode.learns_direction() {
            out.push(("direction".into(), self.direction.data_mut()));
        }
        if let Some(chain) = self.chain.as_mut() {
            for (i, v) in chain.vectors_mut().iter_mut().enumerate() {
                out.push((format!("chain.{i}"), v.as_mut_slice()));
            }
        }
        out
    }

    pub fn trainable_count(&self) -> usize {
        let mut n = 0;
        if self.mode.learns_magnitude() {
            n += self.out_dim;
        }
        if self.mode.learns_direction() {
            n += self.in_dim * self.out_dim;
        }
        if let Some(c) = &self.chain {
            n += c.len() * c.dim();
        }
        n
    }

    /// Re-checks parameter health after an optimizer step.
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.chain {
            c.validate()?;
        }
        if self.magnitude.iter().any(|m| !m.is_finite()) || !self.direction.is_finite() {
            return Err(PaidError::Numeric("non-finite layer parameter".into()));
        }
        Ok(())
    }

    /// Max deviation of the current unit-direction Gram matrix from the
    /// initial one.
    pub fn gram_deviation(&self) -> Result<f64> {
        let current = decompose(&self.effective_weight()?)?.direction;
        Ok(pairwise_gram(&current).max_abs_diff(&pairwise_gram(&self.initial_direction)))
    }

    /// Drift of the effective weight from the pre-trained weight.
    pub fn drift(&self) -> Result<geometry::GeometryDelta> {
        geometry::GeometryDelta::between(&self.effective_weight()?, &self.pretrained)
    }
}
