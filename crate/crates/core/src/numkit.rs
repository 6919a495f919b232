//! Dense row-major `f64` matrices, seeded random draws and a central
//! finite-difference gradient oracle.
//!
//! Everything here is deliberately naive: desk-scale layers are a few
//! hundred columns wide at most, so a cache-friendly i-k-j loop is plenty.

use std::ops::{Index, IndexMut};

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PaidError, Result};

/// Variance floor inside the square root of every standard deviation.
pub const EPS_STD: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(PaidError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_cols(cols: &[Vec<f64>]) -> Self {
        let rows = cols.first().map_or(0, |c| c.len());
        let mut m = Self::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            m.set_col(j, c);
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.expect_shape(other.shape(), "elementwise")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.expect_shape(other.shape(), "add_assign")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Adds `bias[j]` to every entry of column `j`.
    pub fn add_row_vector(&mut self, bias: &[f64]) {
        debug_assert_eq!(bias.len(), self.cols);
        for row in self.data.chunks_mut(self.cols.max(1)) {
            row.iter_mut().zip(bias).for_each(|(a, b)| *a += b);
        }
    }

    /// Column sums, i.e. `1ᵀ·A`.
    pub fn sum_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols.max(1)) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Matrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_shape(&self, shape: (usize, usize), what: &str) -> Result<()> {
        if self.shape() != shape {
            return Err(PaidError::Shape(format!(
                "{what}: expected {}x{}, got {}x{}",
                shape.0, shape.1, self.rows, self.cols
            )));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(PaidError::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            out_row
                .iter_mut()
                .zip(b_row)
                .for_each(|(o, bv)| *o += aik * bv);
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(PaidError::Shape(format!(
            "matmul_tn {}x{}ᵀ by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let b_row = b.row(k);
        for i in 0..a.cols {
            let aki = a.data[k * a.cols + i];
            if aki == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            out_row
                .iter_mut()
                .zip(b_row)
                .for_each(|(o, bv)| *o += aki * bv);
        }
    }
    Ok(out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(PaidError::Shape(format!(
            "matmul_nt {}x{} by {}x{}ᵀ",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = a_row.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    Ok(out)
}

/// Euclidean norm of every column.
pub fn column_norms(a: &Matrix) -> Vec<f64> {
    let mut sq = vec![0.0; a.cols];
    for row in a.data.chunks(a.cols.max(1)) {
        sq.iter_mut().zip(row).for_each(|(s, v)| *s += v * v);
    }
    sq.into_iter().map(f64::sqrt).collect()
}

pub fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn vec_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-column mean and population standard deviation `sqrt(var + EPS_STD)`
/// over the rows of `features`.
pub fn batch_mean_std(features: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = features.rows;
    if n == 0 {
        return Err(PaidError::Shape("batch_mean_std on an empty batch".into()));
    }
    let mean: Vec<f64> = features
        .sum_rows()
        .into_iter()
        .map(|s| s / n as f64)
        .collect();
    let mut var = vec![0.0; features.cols];
    for row in features.data.chunks(features.cols.max(1)) {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    let std = var
        .into_iter()
        .map(|v| (v / n as f64 + EPS_STD).sqrt())
        .collect();
    Ok((mean, std))
}

/// Seeded generator: ChaCha8 keyed from a 64-bit seed, normals drawn with
/// the ziggurat sampler. Both are pure integer/IEEE arithmetic, so a seed
/// yields the same stream on every platform.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, keyed by the parent seed and a label.
    pub fn fork(&self, stream: u64) -> SeededRng {
        SeededRng::new(
            self.seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
                ^ 0x94D0_49BB_1331_11EB,
        )
    }

    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn gaussian_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.gaussian()).collect()
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: self.gaussian_vec(rows * cols),
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

/// Convenience wrapper for `SeededRng::new(seed).gaussian_matrix(..)`.
pub fn rng_gaussian(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    rng.gaussian_matrix(rows, cols)
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(PaidError::Oracle(format!("step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(PaidError::Oracle(format!(
                "non-finite evaluation around coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest elementwise error between an analytic and a numerical gradient.
/// Entries where both magnitudes are below `1e-8` are compared absolutely,
/// everything else relative to the larger magnitude.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs());
            if scale < 1e-8 {
                (a - n).abs()
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matmul_examples() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
        let b = Matrix::from_rows(&[&[0.0], &[1.0]]);
        assert_eq!(
            matmul(&a, &b).unwrap(),
            Matrix::from_rows(&[&[2.0], &[4.0]])
        );
        assert_eq!(matmul(&Matrix::zeros(2, 2), &a).unwrap(), Matrix::zeros(2, 2));
        assert!(matches!(matmul(&a, &Matrix::zeros(3, 1)), Err(PaidError::Shape(_))));
    }

    #[test]
    fn transposed_products_agree() {
        let mut rng = SeededRng::new(3);
        let a = rng.gaussian_matrix(5, 4);
        let b = rng.gaussian_matrix(5, 3);
        let c = rng.gaussian_matrix(6, 4);
        let tn = matmul_tn(&a, &b).unwrap();
        assert!(tn.max_abs_diff(&matmul(&a.transpose(), &b).unwrap()) < 1e-13);
        let nt = matmul_nt(&a, &c).unwrap();
        assert!(nt.max_abs_diff(&matmul(&a, &c.transpose()).unwrap()) < 1e-13);
    }

    #[test]
    fn column_norm_examples() {
        assert_eq!(column_norms(&Matrix::identity(2)), vec![1.0, 1.0]);
        assert_eq!(
            column_norms(&Matrix::from_rows(&[&[3.0, 0.0], &[0.0, 4.0]])),
            vec![3.0, 4.0]
        );
        assert_eq!(column_norms(&Matrix::zeros(3, 2)), vec![0.0, 0.0]);
    }

    #[test]
    fn mean_std_examples() {
        let (m, s) = batch_mean_std(&Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        assert_eq!(m, vec![2.0, 3.0]);
        assert!((s[0] - 1.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12);

        let (m, s) = batch_mean_std(&Matrix::from_rows(&[&[5.0]])).unwrap();
        assert_eq!(m, vec![5.0]);
        assert!(s[0] <= EPS_STD.sqrt() + 1e-18);

        let (_, s) = batch_mean_std(&Matrix::filled(7, 3, 2.5)).unwrap();
        assert!(s.iter().all(|v| *v <= 2.0 * EPS_STD.sqrt()));

        assert!(batch_mean_std(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn gaussian_draws_are_reproducible_and_standard() {
        let a = SeededRng::new(11).gaussian_matrix(100, 100);
        let b = SeededRng::new(11).gaussian_matrix(100, 100);
        let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));

        let n = a.data().len() as f64;
        let mean = a.data().iter().sum::<f64>() / n;
        let std = (a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((std - 1.0).abs() < 0.05, "std {std}");
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], DEFAULT_FD_STEP).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);

        let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0, 0.5], DEFAULT_FD_STEP).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));

        let c = [1.5, -0.25, 3.0];
        let g = finite_diff_grad(|x| vec_dot(&c, x), &[0.3, 0.7, -1.1], DEFAULT_FD_STEP).unwrap();
        for (gi, ci) in g.iter().zip(&c) {
            assert!((gi - ci).abs() < 1e-8);
        }

        let err = finite_diff_grad(|x| 1.0 / x[0], &[0.0], DEFAULT_FD_STEP);
        assert!(err.is_ok(), "±h is finite for 1/x at 0");
        assert!(matches!(
            finite_diff_grad(|x| x[0].ln(), &[0.0], DEFAULT_FD_STEP),
            Err(PaidError::Oracle(_))
        ));
        assert!(finite_diff_grad(|x| x[0], &[0.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn matmul_is_associative(seed in 0u64..1000, n in 1usize..7, k in 1usize..7, m in 1usize..7, p in 1usize..7) {
            let mut rng = SeededRng::new(seed);
            let a = rng.gaussian_matrix(n, k);
            let b = rng.gaussian_matrix(k, m);
            let c = rng.gaussian_matrix(m, p);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            prop_assert!(left.max_abs_diff(&right) / scale < 1e-9);
        }

        #[test]
        fn product_transpose_identity(seed in 0u64..1000, n in 1usize..6, k in 1usize..6, m in 1usize..6) {
            let mut rng = SeededRng::new(seed);
            let a = rng.gaussian_matrix(n, k);
            let b = rng.gaussian_matrix(k, m);
            let lhs = matmul(&a, &b).unwrap().transpose();
            let rhs = matmul(&b.transpose(), &a.transpose()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        }

        #[test]
        fn shifted_batch_moves_mean_only(seed in 0u64..1000, c in -50.0f64..50.0) {
            let mut rng = SeededRng::new(seed);
            let x = rng.gaussian_matrix(9, 4);
            let (m0, s0) = batch_mean_std(&x).unwrap();
            let (m1, s1) = batch_mean_std(&x.map(|v| v + c)).unwrap();
            for j in 0..4 {
                prop_assert!((m1[j] - m0[j] - c).abs() <= 1e-12 * (1.0 + c.abs()));
                prop_assert!((s1[j] - s0[j]).abs() <= 1e-12);
            }
        }
    }
}
