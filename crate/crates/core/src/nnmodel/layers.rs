//! Building blocks with hand-written backward passes.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{PaidError, Result};
use crate::numkit::{matmul, matmul_nt, matmul_tn, Matrix, SeededRng};
use crate::paidlayer::PaidLinear;

use super::Gradients;

/// Plain affine layer `y = x·W + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    input: Option<Matrix>,
}

impl Dense {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Self {
        Self {
            weight,
            bias,
            input: None,
        }
    }

    /// Gaussian weights with variance `1/in_dim`, zero bias.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        let w = rng
            .gaussian_matrix(in_dim, out_dim)
            .scale(1.0 / (in_dim as f64).sqrt());
        Self::new(w, vec![0.0; out_dim])
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = matmul(x, &self.weight)?;
        y.add_row_vector(&self.bias);
        Ok(y)
    }

    /// Returns `dx`; parameter gradients land in `grads` under `prefix` when
    /// `learnable`.
    pub fn backward(
        &mut self,
        dy: &Matrix,
        prefix: &str,
        learnable: bool,
        grads: &mut Gradients,
    ) -> Result<Matrix> {
        let x = self
            .input
            .take()
            .ok_or_else(|| PaidError::State(format!("{prefix}: backward before forward")))?;
        if learnable {
            grads.insert(format!("{prefix}.weight"), matmul_tn(&x, dy)?.into_data());
            grads.insert(format!("{prefix}.bias"), dy.sum_rows());
        }
        matmul_nt(dy, &self.weight)
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        out.push((format!("{prefix}.weight"), self.weight.data_mut()));
        out.push((format!("{prefix}.bias"), self.bias.as_mut_slice()));
    }

    pub fn param_count(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }
}

/// A linear slot inside a block: plain until injection, then adapted.
#[derive(Clone, Debug)]
pub enum Proj {
    Dense(Dense),
    Paid(PaidLinear),
}

impl Proj {
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        match self {
            Proj::Dense(d) => d.forward(x),
            Proj::Paid(p) => p.forward(x),
        }
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Proj::Dense(d) => d.infer(x),
            Proj::Paid(p) => p.infer(x),
        }
    }

    pub fn backward(
        &mut self,
        dy: &Matrix,
        prefix: &str,
        dense_learnable: bool,
        grads: &mut Gradients,
    ) -> Result<Matrix> {
        match self {
            Proj::Dense(d) => d.backward(dy, prefix, dense_learnable, grads),
            Proj::Paid(p) => {
                let (g, dx) = p.backward(dy)?;
                for (name, v) in g.into_named() {
                    grads.insert(format!("{prefix}.{name}"), v);
                }
                Ok(dx)
            }
        }
    }

    pub fn params_mut<'a>(
        &'a mut self,
        prefix: &str,
        dense_learnable: bool,
        out: &mut Vec<(String, &'a mut [f64])>,
    ) {
        match self {
            Proj::Dense(d) => {
                if dense_learnable {
                    d.params_mut(prefix, out)
                }
            }
            Proj::Paid(p) => {
                for (name, slice) in p.learnable_params_mut() {
                    out.push((format!("{prefix}.{name}"), slice));
                }
            }
        }
    }

    pub fn weight(&self) -> Result<Matrix> {
        match self {
            Proj::Dense(d) => Ok(d.weight.clone()),
            Proj::Paid(p) => p.effective_weight(),
        }
    }

    pub fn bias(&self) -> &[f64] {
        match self {
            Proj::Dense(d) => &d.bias,
            Proj::Paid(p) => &p.bias,
        }
    }

    pub fn as_paid(&self) -> Option<&PaidLinear> {
        match self {
            Proj::Paid(p) => Some(p),
            Proj::Dense(_) => None,
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization with learnable gain and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    cache: Option<(Matrix, Vec<f64>)>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            cache: None,
        }
    }

    fn normalize(x: &Matrix) -> (Matrix, Vec<f64>) {
        let d = x.cols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = xhat.row_mut(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        (xhat, inv_std)
    }

    fn affine(&self, xhat: &Matrix) -> Matrix {
        let mut y = xhat.clone();
        for i in 0..y.rows() {
            for ((v, g), b) in y.row_mut(i).iter_mut().zip(&self.gamma).zip(&self.beta) {
                *v = *v * g + b;
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Matrix) -> Matrix {
        let (xhat, inv_std) = Self::normalize(x);
        let y = self.affine(&xhat);
        self.cache = Some((xhat, inv_std));
        y
    }

    pub fn infer(&self, x: &Matrix) -> Matrix {
        self.affine(&Self::normalize(x).0)
    }

    pub fn backward(
        &mut self,
        dy: &Matrix,
        prefix: &str,
        learnable: bool,
        grads: &mut Gradients,
    ) -> Result<Matrix> {
        let (xhat, inv_std) = self
            .cache
            .take()
            .ok_or_else(|| PaidError::State(format!("{prefix}: backward before forward")))?;
        let d = xhat.cols() as f64;
        if learnable {
            let mut dg = vec![0.0; xhat.cols()];
            for i in 0..xhat.rows() {
                for ((g, a), b) in dg.iter_mut().zip(dy.row(i)).zip(xhat.row(i)) {
                    *g += a * b;
                }
            }
            grads.insert(format!("{prefix}.gamma"), dg);
            grads.insert(format!("{prefix}.beta"), dy.sum_rows());
        }
        let mut dx = Matrix::zeros(xhat.rows(), xhat.cols());
        for i in 0..xhat.rows() {
            let dxhat: Vec<f64> = dy.row(i).iter().zip(&self.gamma).map(|(a, g)| a * g).collect();
            let mean_d = dxhat.iter().sum::<f64>() / d;
            let mean_dx = dxhat.iter().zip(xhat.row(i)).map(|(a, b)| a * b).sum::<f64>() / d;
            for ((o, g), xh) in dx.row_mut(i).iter_mut().zip(&dxhat).zip(xhat.row(i)) {
                *o = inv_std[i] * (g - mean_d - xh * mean_dx);
            }
        }
        Ok(dx)
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        out.push((format!("{prefix}.gamma"), self.gamma.as_mut_slice()));
        out.push((format!("{prefix}.beta"), self.beta.as_mut_slice()));
    }
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// Row-wise softmax, stabilized by the row max.
pub fn softmax_rows(s: &Matrix) -> Matrix {
    let mut p = s.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    p
}

/// Mean cross-entropy of `logits` against integer labels and its gradient.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(PaidError::Shape(format!(
            "{} labels for {} rows of logits",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(PaidError::Shape(format!(
            "label {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    let n = logits.rows() as f64;
    let mut p = softmax_rows(logits);
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        loss -= p[(i, l)].max(f64::MIN_POSITIVE).ln();
        p[(i, l)] -= 1.0;
    }
    Ok((loss / n, p.scale(1.0 / n)))
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            m.row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| {
                    if v > best.1 {
                        (j, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

/// Multi-head scaled dot-product attention over groups of `tokens`
/// consecutive rows. Holds the softmax probabilities for backward.
#[derive(Clone, Debug, Default)]
pub struct AttentionCore {
    heads: usize,
    tokens: usize,
    cache: Option<(Matrix, Matrix, Matrix, Vec<Matrix>)>,
}

impl AttentionCore {
    pub fn new(heads: usize, tokens: usize) -> Self {
        Self {
            heads,
            tokens,
            cache: None,
        }
    }

    fn head_block(m: &Matrix, b: usize, h: usize, t: usize, dh: usize) -> Matrix {
        let mut out = Matrix::zeros(t, dh);
        for i in 0..t {
            out.row_mut(i)
                .copy_from_slice(&m.row(b * t + i)[h * dh..(h + 1) * dh]);
        }
        out
    }

    fn add_head_block(dst: &mut Matrix, src: &Matrix, b: usize, h: usize, t: usize, dh: usize) {
        for i in 0..t {
            dst.row_mut(b * t + i)[h * dh..(h + 1) * dh]
                .iter_mut()
                .zip(src.row(i))
                .for_each(|(d, s)| *d += s);
        }
    }

    fn run(&self, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<(Matrix, Vec<Matrix>)> {
        let (rows, dim) = q.shape();
        let t = self.tokens;
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let batch = rows / t;
        let mut out = Matrix::zeros(rows, dim);
        let mut probs = Vec::with_capacity(batch * self.heads);
        for b in 0..batch {
            for h in 0..self.heads {
                let qb = Self::head_block(q, b, h, t, dh);
                let kb = Self::head_block(k, b, h, t, dh);
                let vb = Self::head_block(v, b, h, t, dh);
                let p = softmax_rows(&matmul_nt(&qb, &kb)?.scale(scale));
                let o = matmul(&p, &vb)?;
                Self::add_head_block(&mut out, &o, b, h, t, dh);
                probs.push(p);
            }
        }
        Ok((out, probs))
    }

    pub fn forward(&mut self, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
        let (out, probs) = self.run(q, k, v)?;
        self.cache = Some((q.clone(), k.clone(), v.clone(), probs));
        Ok(out)
    }

    pub fn infer(&self, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
        Ok(self.run(q, k, v)?.0)
    }

    /// Returns `(dq, dk, dv)`.
    pub fn backward(&mut self, dout: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        let (q, k, v, probs) = self
            .cache
            .take()
            .ok_or_else(|| PaidError::State("attention: backward before forward".into()))?;
        let (rows, dim) = q.shape();
        let t = self.tokens;
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Matrix::zeros(rows, dim);
        let mut dk = Matrix::zeros(rows, dim);
        let mut dv = Matrix::zeros(rows, dim);
        for b in 0..rows / t {
            for h in 0..self.heads {
                let p = &probs[b * self.heads + h];
                let qb = Self::head_block(&q, b, h, t, dh);
                let kb = Self::head_block(&k, b, h, t, dh);
                let vb = Self::head_block(&v, b, h, t, dh);
                let dob = Self::head_block(dout, b, h, t, dh);
                let dp = matmul_nt(&dob, &vb)?;
                let dvb = matmul_tn(p, &dob)?;
                let mut ds = Matrix::zeros(t, t);
                for i in 0..t {
                    let dot: f64 = dp.row(i).iter().zip(p.row(i)).map(|(a, b)| a * b).sum();
                    for j in 0..t {
                        ds[(i, j)] = p[(i, j)] * (dp[(i, j)] - dot) * scale;
                    }
                }
                let dqb = matmul(&ds, &kb)?;
                let dkb = matmul_tn(&ds, &qb)?;
                Self::add_head_block(&mut dq, &dqb, b, h, t, dh);
                Self::add_head_block(&mut dk, &dkb, b, h, t, dh);
                Self::add_head_block(&mut dv, &dvb, b, h, t, dh);
            }
        }
        Ok((dq, dk, dv))
    }
}
