//! Finite-difference checks of every hand-written backward pass.

use serde::{Deserialize, Serialize};

use crate::adapt::{alignment_loss, SourceStats};
use crate::error::{PaidError, Result};
use crate::householder::HouseholderChain;
use crate::nnmodel::{softmax_cross_entropy, LayerSelector, ModelConfig, ModelKind, Network};
use crate::numkit::{finite_diff_grad, max_relative_error, Matrix, SeededRng, DEFAULT_FD_STEP};
use crate::paidlayer::{PaidLinear, UpdateMode};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SIZES: [usize; 2] = [4, 9];

/// Produces `(analytic, numeric)` gradients for one operation.
pub type Probe = Box<dyn Fn() -> Result<(Vec<f64>, Vec<f64>)> + Send + Sync>;

pub struct NamedCheck {
    pub name: String,
    pub probe: Probe,
}

impl NamedCheck {
    pub fn new(
        name: impl Into<String>,
        probe: impl Fn() -> Result<(Vec<f64>, Vec<f64>)> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            probe: Box::new(probe),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub n_values: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn worst(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

pub fn run_checks(checks: &[NamedCheck], tolerance: f64) -> Result<GradcheckReport> {
    let mut out = Vec::with_capacity(checks.len());
    for c in checks {
        let (analytic, numeric) = (c.probe)()?;
        if analytic.len() != numeric.len() {
            return Err(PaidError::Shape(format!(
                "{}: {} analytic vs {} numeric values",
                c.name,
                analytic.len(),
                numeric.len()
            )));
        }
        let err = max_relative_error(&analytic, &numeric);
        out.push(CheckResult {
            name: c.name.clone(),
            n_values: analytic.len(),
            max_rel_error: err,
            // NaN never passes.
            passed: err <= tolerance,
        });
    }
    Ok(GradcheckReport {
        tolerance,
        checks: out,
    })
}

/// Householder chains, every paid layer mode, the networks end to end and
/// the alignment loss. `sizes` sets the layer widths probed.
pub fn default_suite(seed: u64, sizes: &[usize]) -> Vec<NamedCheck> {
    let mut checks = Vec::new();
    for (k, &d) in sizes.iter().enumerate() {
        let s = seed.wrapping_add(100 * k as u64);
        checks.push(NamedCheck::new(format!("householder.chain[{d}]"), move || {
            chain_probe(s, d)
        }));
        for mode in UpdateMode::ALL {
            checks.push(NamedCheck::new(format!("paidlayer.{mode}[{d}]"), move || {
                paid_probe(s, d, mode)
            }));
        }
    }
    checks.push(NamedCheck::new("nnmodel.mlp", move || {
        network_probe(seed, ModelKind::Mlp)
    }));
    checks.push(NamedCheck::new("nnmodel.transformer", move || {
        network_probe(seed, ModelKind::TinyTransformer)
    }));
    checks.push(NamedCheck::new("nnmodel.transformer.paid", move || injected_probe(seed)));
    checks.push(NamedCheck::new("adapt.alignment_loss", move || alignment_probe(seed)));
    checks
}

fn chain_probe(seed: u64, dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = SeededRng::new(seed).fork(1);
    let r = dim.min(6);
    let mut chain = HouseholderChain::random(dim, r, &mut rng)?;
    for (i, v) in chain.vectors_mut().iter_mut().enumerate() {
        v.iter_mut().for_each(|x| *x *= 0.6 + 0.2 * i as f64);
    }
    let x = rng.gaussian_matrix(dim, 3);
    let up = rng.gaussian_matrix(dim, 3);
    let g = chain.grad(&x, &up)?;
    let mut analytic = g.vectors.concat();
    analytic.extend_from_slice(g.x.data());

    let mut start = chain.params();
    let n_chain = start.len();
    start.extend_from_slice(x.data());
    let numeric = finite_diff_grad(
        |p| {
            let mut c = chain.clone();
            c.set_params(&p[..n_chain]).expect("same length");
            let xm = Matrix::from_vec(dim, 3, p[n_chain..].to_vec()).expect("same length");
            c.apply(&xm).map(|y| y.dot(&up)).unwrap_or(f64::NAN)
        },
        &start,
        DEFAULT_FD_STEP,
    )?;
    Ok((analytic, numeric))
}

fn paid_probe(seed: u64, dim: usize, mode: UpdateMode) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = SeededRng::new(seed).fork(2);
    let (in_dim, out_dim) = (dim, dim.max(3) - 1);
    let w = rng.gaussian_matrix(in_dim, out_dim).scale(0.5);
    let r = 2 * (dim / 2).max(1);
    let mut layer = PaidLinear::from_pretrained(&w, rng.gaussian_vec(out_dim), mode, r, &mut rng)?;
    for (_, p) in layer.learnable_params_mut() {
        p.iter_mut().for_each(|v| *v += 0.3 * rng.gaussian());
    }
    let x = rng.gaussian_matrix(3, in_dim);
    let up = rng.gaussian_matrix(3, out_dim);
    layer.forward(&x)?;
    let (grads, dx) = layer.backward(&up)?;
    let named = grads.into_named();

    let base = layer.clone();
    let mut start: Vec<f64> = Vec::new();
    let mut analytic: Vec<f64> = Vec::new();
    {
        let mut probe = base.clone();
        for (name, p) in probe.learnable_params_mut() {
            let g = named
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| PaidError::Oracle(format!("no gradient for {name}")))?;
            analytic.extend_from_slice(&g.1);
            start.extend_from_slice(p);
        }
    }
    let n_params = start.len();
    analytic.extend_from_slice(dx.data());
    start.extend_from_slice(x.data());
    let numeric = finite_diff_grad(
        |p| {
            let mut c = base.clone();
            let mut off = 0;
            for (_, q) in c.learnable_params_mut() {
                q.copy_from_slice(&p[off..off + q.len()]);
                off += q.len();
            }
            let xm = Matrix::from_vec(3, in_dim, p[n_params..].to_vec()).expect("same length");
            c.infer(&xm).map(|y| y.dot(&up)).unwrap_or(f64::NAN)
        },
        &start,
        DEFAULT_FD_STEP,
    )?;
    Ok((analytic, numeric))
}

fn small_model(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        dim: 8,
        depth: 2,
        heads: 2,
        mlp_ratio: 1.5,
        tokens: 3,
        n_classes: 3,
        input_dim: 9,
        feature_tap: None,
    }
}

fn flat(net: &mut Network) -> (Vec<String>, Vec<f64>) {
    let mut names = Vec::new();
    let mut values = Vec::new();
    for (n, p) in net.learnable_params_mut() {
        names.push(n);
        values.extend_from_slice(p);
    }
    (names, values)
}

fn set_flat(net: &mut Network, values: &[f64]) {
    let mut off = 0;
    for (_, p) in net.learnable_params_mut() {
        p.copy_from_slice(&values[off..off + p.len()]);
        off += p.len();
    }
}

fn network_probe(seed: u64, kind: ModelKind) -> Result<(Vec<f64>, Vec<f64>)> {
    let cfg = small_model(kind);
    let mut rng = SeededRng::new(seed).fork(3);
    let mut net = Network::build(&cfg, &mut rng)?;
    let x = rng.gaussian_matrix(4, cfg.input_dim);
    let labels = [0, 2, 1, 2];
    let out = net.forward(&x)?;
    let (_, dlogits) = softmax_cross_entropy(&out.logits, &labels)?;
    let grads = net.backward_logits(&dlogits)?;
    let (names, start) = flat(&mut net);
    let analytic = gather(&grads, &names)?;
    let numeric = finite_diff_grad(
        |p| {
            let mut n = net.clone();
            set_flat(&mut n, p);
            n.forward_logits(&x)
                .and_then(|l| softmax_cross_entropy(&l, &labels))
                .map_or(f64::NAN, |(loss, _)| loss)
        },
        &start,
        DEFAULT_FD_STEP,
    )?;
    Ok((analytic, numeric))
}

/// Alignment loss through a paid-injected transformer, gradients with
/// respect to the adapted parameters only.
fn injected_probe(seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let cfg = small_model(ModelKind::TinyTransformer);
    let mut rng = SeededRng::new(seed).fork(4);
    let source = Network::build(&cfg, &mut rng)?;
    let mut net = source.inject_paid(&LayerSelector::all(), UpdateMode::Paid, 4, &mut rng)?;
    for (_, p) in net.learnable_params_mut() {
        p.iter_mut().for_each(|v| *v += 0.2 * rng.gaussian());
    }
    let stats = SourceStats::from_features(&source.forward_features(&rng.gaussian_matrix(16, cfg.input_dim))?)?;
    let x = rng.gaussian_matrix(5, cfg.input_dim).scale(1.5);
    let out = net.forward(&x)?;
    let aligned = alignment_loss(&stats, &out.features, 0.5)?;
    let grads = net.backward_features(&aligned.dz)?;
    let (names, start) = flat(&mut net);
    let analytic = gather(&grads, &names)?;
    let numeric = finite_diff_grad(
        |p| {
            let mut n = net.clone();
            set_flat(&mut n, p);
            n.forward_features(&x)
                .and_then(|z| alignment_loss(&stats, &z, 0.5))
                .map_or(f64::NAN, |l| l.loss)
        },
        &start,
        DEFAULT_FD_STEP,
    )?;
    Ok((analytic, numeric))
}

fn alignment_probe(seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = SeededRng::new(seed).fork(5);
    let z = rng.gaussian_matrix(6, 5);
    let stats = SourceStats {
        mu: rng.gaussian_vec(5),
        sigma: (0..5).map(|_| 0.5 + rng.uniform()).collect(),
        n_samples: 100,
    };
    let analytic = alignment_loss(&stats, &z, 0.7)?.dz.into_data();
    let numeric = finite_diff_grad(
        |v| {
            let m = Matrix::from_vec(6, 5, v.to_vec()).expect("same length");
            alignment_loss(&stats, &m, 0.7).map_or(f64::NAN, |l| l.loss)
        },
        z.data(),
        DEFAULT_FD_STEP,
    )?;
    Ok((analytic, numeric))
}

fn gather(grads: &crate::nnmodel::Gradients, names: &[String]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for n in names {
        let g = grads
            .get(n)
            .ok_or_else(|| PaidError::Oracle(format!("no gradient for {n}")))?;
        out.extend_from_slice(g);
    }
    Ok(out)
}
