//! Orthogonal maps parameterized as products of Householder reflections.
//!
//! A chain holds `r` unnormalized vectors `v_i`; each use normalizes them to
//! `u_i = v_i / ‖v_i‖` and forms `H_i = I − 2 u_i u_iᵀ`. The chain represents
//! `O = H_1 H_2 ⋯ H_r`, applied right to left (`H_r` touches the input
//! first). With `r = dim` every element of `O(dim)` is reachable, which
//! [`decompose_orthogonal`] makes concrete.

use serde::{Deserialize, Serialize};

use crate::error::{PaidError, Result};
use crate::numkit::{vec_norm, Matrix, SeededRng};

/// Reflector vectors shorter than this are rejected.
pub const MIN_REFLECTOR_NORM: f64 = 1e-8;

/// Default number of reflections per chain.
pub const DEFAULT_REFLECTIONS: usize = 12;

fn unit(v: &[f64], index: usize) -> Result<(Vec<f64>, f64)> {
    let norm = vec_norm(v);
    if !(norm >= MIN_REFLECTOR_NORM) {
        return Err(PaidError::DegenerateReflector { index, norm });
    }
    Ok((v.iter().map(|x| x / norm).collect(), norm))
}

/// `H = I − 2uuᵀ` with `u = v/‖v‖`.
pub fn reflection_matrix(v: &[f64]) -> Result<Matrix> {
    let (u, _) = unit(v, 0)?;
    let n = u.len();
    let mut h = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] -= 2.0 * u[i] * u[j];
        }
    }
    Ok(h)
}

/// In place `X ← (I − 2uuᵀ) X` for a unit `u`.
fn reflect_in_place(u: &[f64], x: &mut Matrix) {
    let n = x.cols();
    let mut proj = vec![0.0; n];
    for (i, ui) in u.iter().enumerate() {
        if *ui != 0.0 {
            proj.iter_mut()
                .zip(x.row(i))
                .for_each(|(p, v)| *p += ui * v);
        }
    }
    for (i, ui) in u.iter().enumerate() {
        let s = 2.0 * ui;
        if s != 0.0 {
            x.row_mut(i)
                .iter_mut()
                .zip(&proj)
                .for_each(|(v, p)| *v -= s * p);
        }
    }
}

/// Gradients of `⟨upstream, O·x⟩`.
#[derive(Clone, Debug)]
pub struct ChainGrad {
    pub vectors: Vec<Vec<f64>>,
    pub x: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HouseholderChain {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl HouseholderChain {
    pub fn new(dim: usize, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(PaidError::Shape(format!(
                "reflector of length {} in a chain of dim {dim}",
                bad.len()
            )));
        }
        let chain = Self { dim, vectors };
        chain.validate()?;
        Ok(chain)
    }

    /// Chain with `O = I` exactly: consecutive reflectors share a random
    /// vector, so each pair cancels. `r` must be even.
    pub fn init_identity(dim: usize, r: usize, rng: &mut SeededRng) -> Result<Self> {
        if !r.is_multiple_of(2) {
            return Err(PaidError::Config(format!(
                "identity initialization needs an even reflection count, got {r}"
            )));
        }
        let mut vectors = Vec::with_capacity(r);
        for _ in 0..r / 2 {
            let v = random_unit(dim, rng);
            vectors.push(v.clone());
            vectors.push(v);
        }
        Self::new(dim, vectors)
    }

    /// Chain of `r` independent random reflectors. This is the explicit
    /// non-identity start; any `r` is accepted.
    pub fn random(dim: usize, r: usize, rng: &mut SeededRng) -> Result<Self> {
        let vectors = (0..r).map(|_| random_unit(dim, rng)).collect();
        Self::new(dim, vectors)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.vectors
    }

    /// Flattened reflector parameters, reflector-major.
    pub fn params(&self) -> Vec<f64> {
        self.vectors.concat()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.dim * self.len() {
            return Err(PaidError::Shape(format!(
                "{} parameters for a chain of {} x {}",
                flat.len(),
                self.len(),
                self.dim
            )));
        }
        for (v, chunk) in self.vectors.iter_mut().zip(flat.chunks(self.dim.max(1))) {
            v.copy_from_slice(chunk);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.vectors.iter().enumerate() {
            unit(v, i)?;
        }
        Ok(())
    }

    fn units(&self) -> Result<Vec<(Vec<f64>, f64)>> {
        self.vectors
            .iter()
            .enumerate()
            .map(|(i, v)| unit(v, i))
            .collect()
    }

    fn check_rows(&self, x: &Matrix) -> Result<()> {
        if x.rows() != self.dim {
            return Err(PaidError::Shape(format!(
                "chain of dim {} applied to {} rows",
                self.dim,
                x.rows()
            )));
        }
        Ok(())
    }

    /// `O·x`, one rank-1 update per reflector.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        self.check_rows(x)?;
        let units = self.units()?;
        let mut out = x.clone();
        for (u, _) in units.iter().rev() {
            reflect_in_place(u, &mut out);
        }
        Ok(out)
    }

    /// `Oᵀ·x = H_r ⋯ H_1 x`.
    pub fn apply_transpose(&self, x: &Matrix) -> Result<Matrix> {
        self.check_rows(x)?;
        let units = self.units()?;
        let mut out = x.clone();
        for (u, _) in units.iter() {
            reflect_in_place(u, &mut out);
        }
        Ok(out)
    }

    /// Explicit `O`.
    pub fn materialize(&self) -> Result<Matrix> {
        self.apply(&Matrix::identity(self.dim))
    }

    /// Exact gradients of `⟨upstream, O·x⟩` with respect to every `v_i`
    /// (through the normalization) and to `x`.
    pub fn grad(&self, x: &Matrix, upstream: &Matrix) -> Result<ChainGrad> {
        self.check_rows(x)?;
        upstream.expect_shape(x.shape(), "chain upstream")?;
        let units = self.units()?;
        let r = units.len();

        let mut inputs = Vec::with_capacity(r + 1);
        inputs.push(x.clone());
        for (u, _) in units.iter().rev() {
            let mut next = inputs.last().unwrap().clone();
            reflect_in_place(u, &mut next);
            inputs.push(next);
        }
        inputs.reverse();
        // inputs[0] = O·x, inputs[i + 1] is what H_i sees, inputs[r] = x.
        let n = x.cols();
        let mut g = upstream.clone();
        let mut vector_grads = vec![Vec::new(); r];
        for (i, (u, norm)) in units.iter().enumerate() {
            let z = &inputs[i + 1];
            // zu = Zᵀu, gu = Gᵀu
            let mut zu = vec![0.0; n];
            let mut gu = vec![0.0; n];
            for (row, ur) in u.iter().enumerate() {
                zu.iter_mut().zip(z.row(row)).for_each(|(a, v)| *a += ur * v);
                gu.iter_mut().zip(g.row(row)).for_each(|(a, v)| *a += ur * v);
            }
            // ∂/∂u ⟨G, Z − 2u uᵀZ⟩ = −2 (G Zᵀu + Z Gᵀu)
            let du: Vec<f64> = (0..self.dim)
                .map(|row| {
                    let gz: f64 = g.row(row).iter().zip(&zu).map(|(a, b)| a * b).sum();
                    let zg: f64 = z.row(row).iter().zip(&gu).map(|(a, b)| a * b).sum();
                    -2.0 * (gz + zg)
                })
                .collect();
            let radial: f64 = u.iter().zip(&du).map(|(a, b)| a * b).sum();
            vector_grads[i] = du
                .iter()
                .zip(u)
                .map(|(d, uu)| (d - uu * radial) / norm)
                .collect();
            reflect_in_place(u, &mut g);
        }
        Ok(ChainGrad {
            vectors: vector_grads,
            x: g,
        })
    }
}

fn random_unit(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let v = rng.gaussian_vec(dim);
        let n = vec_norm(&v);
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Householder triangularization of an orthogonal matrix, returned as a
/// chain whose materialization reproduces `o`. Uses at most `dim`
/// reflectors; steps whose column is already in place are skipped.
pub fn decompose_orthogonal(o: &Matrix) -> Result<HouseholderChain> {
    let (n, m) = o.shape();
    if n != m {
        return Err(PaidError::Shape(format!("{n}x{m} is not square")));
    }
    let gram = crate::numkit::matmul_tn(o, o)?;
    let dev = gram.max_abs_diff(&Matrix::identity(n));
    if !(dev <= 1e-8) {
        return Err(PaidError::Validation(format!(
            "matrix is not orthogonal: max |OᵀO − I| = {dev:e}"
        )));
    }

    let mut a = o.clone();
    let mut vectors = Vec::new();
    for k in 0..n {
        let x0 = a[(k, k)];
        let rest_sq: f64 = ((k + 1)..n).map(|i| a[(i, k)] * a[(i, k)]).sum();
        let norm = (x0 * x0 + rest_sq).sqrt();
        if rest_sq.sqrt() < 1e-14 && x0 > 0.0 {
            continue;
        }
        // v = x − ‖x‖e_k maps x onto +‖x‖e_k; the head is computed without
        // cancellation when x0 > 0.
        let head = if x0 <= 0.0 {
            x0 - norm
        } else {
            -rest_sq / (x0 + norm)
        };
        let mut v = vec![0.0; n];
        v[k] = head;
        for i in (k + 1)..n {
            v[i] = a[(i, k)];
        }
        let (u, _) = unit(&v, vectors.len())?;
        reflect_in_place(&u, &mut a);
        vectors.push(u);
    }
    HouseholderChain::new(n, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{finite_diff_grad, matmul, matmul_tn, max_relative_error, DEFAULT_FD_STEP};
    use proptest::prelude::*;

    /// Determinant by Gaussian elimination with partial pivoting.
    fn det(m: &Matrix) -> f64 {
        let n = m.rows();
        let mut a = m.clone();
        let mut d = 1.0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
                .unwrap();
            if a[(p, k)] == 0.0 {
                return 0.0;
            }
            if p != k {
                for j in 0..n {
                    let t = a[(k, j)];
                    a[(k, j)] = a[(p, j)];
                    a[(p, j)] = t;
                }
                d = -d;
            }
            d *= a[(k, k)];
            for i in (k + 1)..n {
                let f = a[(i, k)] / a[(k, k)];
                for j in k..n {
                    a[(i, j)] -= f * a[(k, j)];
                }
            }
        }
        d
    }

    fn orth_error(o: &Matrix) -> f64 {
        matmul_tn(o, o)
            .unwrap()
            .max_abs_diff(&Matrix::identity(o.rows()))
    }

    #[test]
    fn reflection_examples() {
        let h = reflection_matrix(&[1.0, 0.0]).unwrap();
        assert_eq!(h, Matrix::from_rows(&[&[-1.0, 0.0], &[0.0, 1.0]]));
        let h = reflection_matrix(&[1.0, 1.0]).unwrap();
        assert!(h.max_abs_diff(&Matrix::from_rows(&[&[0.0, -1.0], &[-1.0, 0.0]])) < 1e-15);
        let mut rng = SeededRng::new(1);
        let h = reflection_matrix(&rng.gaussian_vec(6)).unwrap();
        assert!(matmul(&h, &h).unwrap().max_abs_diff(&Matrix::identity(6)) < 1e-14);
        assert!(h.max_abs_diff(&h.transpose()) == 0.0);
        assert!(matches!(
            reflection_matrix(&[1e-9, 0.0]),
            Err(PaidError::DegenerateReflector { .. })
        ));
    }

    #[test]
    fn apply_examples() {
        let mut rng = SeededRng::new(2);
        let x = rng.gaussian_matrix(5, 3);
        let empty = HouseholderChain::new(5, vec![]).unwrap();
        assert_eq!(empty.apply(&x).unwrap(), x);

        let v = rng.gaussian_vec(5);
        let pair = HouseholderChain::new(5, vec![v.clone(), v]).unwrap();
        assert!(pair.apply(&x).unwrap().max_abs_diff(&x) <= 1e-12);

        let chain = HouseholderChain::random(5, 4, &mut rng).unwrap();
        let y = chain.apply(&x).unwrap();
        for (a, b) in crate::numkit::column_norms(&y)
            .iter()
            .zip(crate::numkit::column_norms(&x))
        {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(chain.apply(&Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn materialize_examples() {
        let chain = HouseholderChain::new(2, vec![vec![1.0, 0.0]]).unwrap();
        assert_eq!(
            chain.materialize().unwrap(),
            Matrix::from_rows(&[&[-1.0, 0.0], &[0.0, 1.0]])
        );
        let mut rng = SeededRng::new(3);
        for r in 0..6 {
            let chain = HouseholderChain::random(3, r, &mut rng).unwrap();
            let o = chain.materialize().unwrap();
            let expected = if r % 2 == 0 { 1.0 } else { -1.0 };
            assert!((det(&o) - expected).abs() <= 1e-8, "r={r}");
            assert!(orth_error(&o) <= 1e-10);
            let x = rng.gaussian_matrix(3, 4);
            let via_apply = chain.apply(&x).unwrap();
            assert!(matmul(&o, &x).unwrap().max_abs_diff(&via_apply) <= 1e-12);
        }
    }

    #[test]
    fn product_order_is_h1_first_from_the_left() {
        let mut rng = SeededRng::new(4);
        let v1 = rng.gaussian_vec(4);
        let v2 = rng.gaussian_vec(4);
        let chain = HouseholderChain::new(4, vec![v1.clone(), v2.clone()]).unwrap();
        let expected = matmul(
            &reflection_matrix(&v1).unwrap(),
            &reflection_matrix(&v2).unwrap(),
        )
        .unwrap();
        assert!(chain.materialize().unwrap().max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(5);
        for (dim, r, n) in [(3, 1, 2), (6, 4, 3), (16, 8, 5), (9, 6, 1)] {
            let chain = HouseholderChain::random(dim, r, &mut rng).unwrap();
            // Scale reflector vectors away from unit length so the
            // normalization Jacobian is exercised.
            let mut chain = chain;
            for (i, v) in chain.vectors_mut().iter_mut().enumerate() {
                v.iter_mut().for_each(|x| *x *= 0.5 + i as f64 * 0.3);
            }
            let x = rng.gaussian_matrix(dim, n);
            let up = rng.gaussian_matrix(dim, n);
            let g = chain.grad(&x, &up).unwrap();

            let params = chain.params();
            let numeric = finite_diff_grad(
                |p| {
                    let mut c = chain.clone();
                    c.set_params(p).unwrap();
                    c.apply(&x).unwrap().dot(&up)
                },
                &params,
                DEFAULT_FD_STEP,
            )
            .unwrap();
            let analytic = g.vectors.concat();
            let err = max_relative_error(&analytic, &numeric);
            assert!(err <= 1e-5, "dim={dim} r={r}: {err:e}");

            let xt = chain.apply_transpose(&up).unwrap();
            assert!(g.x.max_abs_diff(&xt) <= 1e-12);
            let numeric_x = finite_diff_grad(
                |xs| {
                    let xm = Matrix::from_vec(dim, n, xs.to_vec()).unwrap();
                    chain.apply(&xm).unwrap().dot(&up)
                },
                x.data(),
                DEFAULT_FD_STEP,
            )
            .unwrap();
            assert!(max_relative_error(g.x.data(), &numeric_x) <= 1e-5);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = SeededRng::new(6);
        let chain = HouseholderChain::random(5, 3, &mut rng).unwrap();
        let x = rng.gaussian_matrix(5, 2);
        let g = chain.grad(&x, &Matrix::zeros(5, 2)).unwrap();
        assert!(g.vectors.iter().flatten().all(|v| *v == 0.0));
        assert!(g.x.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_init() {
        let mut a = SeededRng::new(7);
        let mut b = SeededRng::new(8);
        let ca = HouseholderChain::init_identity(8, 12, &mut a).unwrap();
        let cb = HouseholderChain::init_identity(8, 12, &mut b).unwrap();
        assert!(ca.materialize().unwrap().max_abs_diff(&Matrix::identity(8)) <= 1e-12);
        assert!(cb.materialize().unwrap().max_abs_diff(&Matrix::identity(8)) <= 1e-12);
        assert_ne!(ca.params(), cb.params());
        assert!(matches!(
            HouseholderChain::init_identity(8, 3, &mut a),
            Err(PaidError::Config(_))
        ));
    }

    #[test]
    fn identity_init_is_not_a_stationary_point() {
        let mut rng = SeededRng::new(9);
        let chain = HouseholderChain::init_identity(6, 4, &mut rng).unwrap();
        let x = rng.gaussian_matrix(6, 4);
        let target = rng.gaussian_matrix(6, 4);
        let loss = |c: &HouseholderChain| {
            let y = c.apply(&x).unwrap();
            y.sub(&target).unwrap().data().iter().map(|v| v * v).sum::<f64>()
        };
        let numeric = finite_diff_grad(
            |p| {
                let mut c = chain.clone();
                c.set_params(p).unwrap();
                loss(&c)
            },
            &chain.params(),
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert!(numeric.iter().any(|g| g.abs() > 1e-6));
    }

    #[test]
    fn decompose_orthogonal_examples() {
        let o = Matrix::from_rows(&[&[-1.0, 0.0], &[0.0, 1.0]]);
        let c = decompose_orthogonal(&o).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.materialize().unwrap().max_abs_diff(&o) <= 1e-9);
        let u = &c.vectors()[0];
        assert!((u[0].abs() - 1.0).abs() < 1e-12 && u[1].abs() < 1e-12);

        assert!(decompose_orthogonal(&Matrix::identity(4)).unwrap().is_empty());

        let mut rng = SeededRng::new(10);
        for dim in 1..=8 {
            let r = rng.below(2 * dim + 1);
            let o = HouseholderChain::random(dim, r, &mut rng)
                .unwrap()
                .materialize()
                .unwrap();
            let c = decompose_orthogonal(&o).unwrap();
            assert!(c.len() <= dim);
            assert!(c.materialize().unwrap().max_abs_diff(&o) <= 1e-9);
        }

        let not_orth = Matrix::from_rows(&[&[1.0, 0.1], &[0.0, 1.0]]);
        assert!(matches!(
            decompose_orthogonal(&not_orth),
            Err(PaidError::Validation(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn chains_are_isometries(seed in 0u64..10_000, dim in 1usize..24, r in 0usize..24, n in 1usize..5) {
            let mut rng = SeededRng::new(seed);
            let chain = HouseholderChain::random(dim, r, &mut rng).unwrap();
            let o = chain.materialize().unwrap();
            prop_assert!(orth_error(&o) <= 1e-10);
            let x = rng.gaussian_matrix(dim, n);
            let y = rng.gaussian_matrix(dim, n);
            let ox = chain.apply(&x).unwrap();
            let oy = chain.apply(&y).unwrap();
            let g0 = matmul_tn(&x, &y).unwrap();
            let g1 = matmul_tn(&ox, &oy).unwrap();
            prop_assert!(g0.max_abs_diff(&g1) <= 1e-10);
        }
    }
}
