//! Magnitude/direction decomposition of weight matrices and the three
//! cross-domain drift metrics built on it.
//!
//! Neurons are **columns**: a weight `W ∈ R^{d×k}` holds `k` neuron vectors
//! of dimension `d`. The drift metrics compare two such matrices column by
//! column (magnitude, absolute angle) or as a whole (pairwise structure,
//! summarized by hyperspherical energy).

use serde::{Deserialize, Serialize};

use crate::error::{PaidError, Result};
use crate::numkit::{column_norms, matmul_tn, Matrix};

/// Columns shorter than this cannot be given a direction.
pub const MIN_COL_NORM: f64 = 1e-12;
/// Closest two unit neurons may be before the energy is declared singular.
pub const EPS_HE: f64 = 1e-9;

/// Per-neuron magnitudes plus unit-column directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposedWeight {
    pub magnitude: Vec<f64>,
    pub direction: Matrix,
}

pub fn decompose(w: &Matrix) -> Result<DecomposedWeight> {
    let magnitude = column_norms(w);
    if let Some((column, &norm)) = magnitude
        .iter()
        .enumerate()
        .find(|(_, n)| !(**n >= MIN_COL_NORM))
    {
        return Err(PaidError::DegenerateNeuron { column, norm });
    }
    let mut direction = w.clone();
    for row in direction.data_mut().chunks_mut(w.cols().max(1)) {
        row.iter_mut().zip(&magnitude).for_each(|(v, m)| *v /= m);
    }
    Ok(DecomposedWeight {
        magnitude,
        direction,
    })
}

pub fn recompose(dw: &DecomposedWeight) -> Matrix {
    scale_columns(&dw.direction, &dw.magnitude)
}

/// Multiplies column `j` of `m` by `scales[j]`.
pub fn scale_columns(m: &Matrix, scales: &[f64]) -> Matrix {
    debug_assert_eq!(m.cols(), scales.len());
    let mut out = m.clone();
    for row in out.data_mut().chunks_mut(scales.len().max(1)) {
        row.iter_mut().zip(scales).for_each(|(v, s)| *v *= s);
    }
    out
}

fn same_shape(w1: &Matrix, w2: &Matrix) -> Result<()> {
    if w1.shape() != w2.shape() {
        return Err(PaidError::Shape(format!(
            "weights are {}x{} and {}x{}",
            w1.rows(),
            w1.cols(),
            w2.rows(),
            w2.cols()
        )));
    }
    Ok(())
}

/// Mean absolute change of neuron norms.
pub fn delta_magnitude(w1: &Matrix, w2: &Matrix) -> Result<f64> {
    same_shape(w1, w2)?;
    let k = w1.cols();
    if k == 0 {
        return Ok(0.0);
    }
    let n1 = decompose(w1)?.magnitude;
    let n2 = decompose(w2)?.magnitude;
    Ok(n1.iter().zip(&n2).map(|(a, b)| (a - b).abs()).sum::<f64>() / k as f64)
}

/// Mean of `1 − cos` between paired neuron directions, in `[0, 2]`.
pub fn delta_angle(w1: &Matrix, w2: &Matrix) -> Result<f64> {
    same_shape(w1, w2)?;
    let k = w1.cols();
    if k == 0 {
        return Ok(0.0);
    }
    let d1 = decompose(w1)?.direction;
    let d2 = decompose(w2)?.direction;
    let mut cos = vec![0.0; k];
    for (r1, r2) in d1
        .data()
        .chunks(k)
        .zip(d2.data().chunks(k))
    {
        for j in 0..k {
            cos[j] += r1[j] * r2[j];
        }
    }
    Ok(cos.iter().map(|c| 1.0 - c.clamp(-1.0, 1.0)).sum::<f64>() / k as f64)
}

/// `Σ_{i≠j} ‖d_i − d_j‖⁻¹` over ordered pairs of unit columns.
pub fn hyperspherical_energy(d: &Matrix) -> Result<f64> {
    let norms = column_norms(d);
    if let Some((column, &norm)) = norms
        .iter()
        .enumerate()
        .find(|(_, n)| !((**n - 1.0).abs() <= 1e-9))
    {
        return Err(PaidError::Validation(format!(
            "hyperspherical energy needs unit columns; column {column} has norm {norm}"
        )));
    }
    let gram = pairwise_gram(d);
    let k = d.cols();
    let mut energy = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            // ‖a − b‖² = 2 − 2⟨a, b⟩ for unit vectors; the direct difference
            // is used to keep precision for nearly coincident neurons.
            let dist = if gram[(i, j)] > 0.99 {
                let mut s = 0.0;
                for r in 0..d.rows() {
                    let diff = d[(r, i)] - d[(r, j)];
                    s += diff * diff;
                }
                s.sqrt()
            } else {
                (2.0 - 2.0 * gram[(i, j)]).max(0.0).sqrt()
            };
            if !(dist >= EPS_HE) {
                return Err(PaidError::SingularEnergy {
                    i,
                    j,
                    distance: dist,
                });
            }
            energy += 2.0 / dist;
        }
    }
    Ok(energy)
}

/// `|HE(dir(w1)) − HE(dir(w2))|`.
pub fn delta_structure(w1: &Matrix, w2: &Matrix) -> Result<f64> {
    let e1 = hyperspherical_energy(&decompose(w1)?.direction)?;
    let e2 = hyperspherical_energy(&decompose(w2)?.direction)?;
    Ok((e1 - e2).abs())
}

/// Gram matrix `DᵀD` of the columns of `d`.
pub fn pairwise_gram(d: &Matrix) -> Matrix {
    matmul_tn(d, d).expect("DᵀD is always conformable")
}

/// The three drift metrics between two weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryDelta {
    pub delta_m: f64,
    pub delta_a: f64,
    pub delta_s: f64,
}

impl GeometryDelta {
    pub fn between(w1: &Matrix, w2: &Matrix) -> Result<Self> {
        Ok(Self {
            delta_m: delta_magnitude(w1, w2)?,
            delta_a: delta_angle(w1, w2)?,
            delta_s: delta_structure(w1, w2)?,
        })
    }

    /// Unweighted mean over layers.
    pub fn mean(deltas: &[GeometryDelta]) -> GeometryDelta {
        if deltas.is_empty() {
            return GeometryDelta::default();
        }
        let n = deltas.len() as f64;
        GeometryDelta {
            delta_m: deltas.iter().map(|d| d.delta_m).sum::<f64>() / n,
            delta_a: deltas.iter().map(|d| d.delta_a).sum::<f64>() / n,
            delta_s: deltas.iter().map(|d| d.delta_s).sum::<f64>() / n,
        }
    }
}
