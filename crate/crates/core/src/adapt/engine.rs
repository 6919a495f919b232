use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::DomainStream;
use crate::error::{PaidError, Result};
use crate::geometry::GeometryDelta;
use crate::householder::DEFAULT_REFLECTIONS;
use crate::nnmodel::{argmax_rows, LayerSelector, Network};
use crate::numkit::{Matrix, SeededRng};
use crate::paidlayer::UpdateMode;

use super::loss::{alignment_loss, SourceStats};
use super::optimizer::{AdamWParams, OptimizerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub r: usize,
    pub mode: UpdateMode,
    pub selector: LayerSelector,
    /// The first `warmup_steps` optimizer steps run at a tenth of the rate.
    pub warmup_steps: usize,
    pub steps_per_batch: usize,
    /// Source samples used for the feature statistics.
    pub n_source: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            lambda: 1.0,
            batch_size: 64,
            r: DEFAULT_REFLECTIONS,
            mode: UpdateMode::Paid,
            selector: LayerSelector::all(),
            warmup_steps: 0,
            steps_per_batch: 1,
            n_source: 500,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PaidError::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.weight_decay < 0.0 {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.steps_per_batch == 0 || self.n_source == 0 {
            return bad("batch_size, steps_per_batch and n_source must be at least 1".into());
        }
        if self.mode.uses_chain() && (self.r == 0 || self.r % 2 == 1) {
            return bad(format!("r must be a positive even count, got {}", self.r));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWParams {
        AdamWParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
        }
    }

    /// Wraps `source` for adaptation with this config's selector, mode and r.
    pub fn inject(&self, source: &Network) -> Result<Network> {
        self.validate()?;
        let mut rng = SeededRng::new(self.seed).fork(9);
        source.inject_paid(&self.selector, self.mode, self.r, &mut rng)
    }
}

/// Outcome of one online step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Predictions made before the update.
    pub predictions: Vec<usize>,
    /// Alignment loss of the first forward pass.
    pub loss: f64,
    /// Misclassified samples, when labels were supplied.
    pub errors: Option<usize>,
    pub sigma_skipped: bool,
}

/// Predict with the current parameters, then take `steps_per_batch`
/// alignment steps on the same batch. Labels only feed `errors`.
pub fn adapt_step(
    net: &mut Network,
    x: &Matrix,
    labels: Option<&[usize]>,
    stats: &SourceStats,
    cfg: &AdaptConfig,
    opt: &mut OptimizerState,
) -> Result<StepOutcome> {
    let Some(injection) = net.injection() else {
        return Err(PaidError::Config("adaptation needs an injected network".into()));
    };
    let frozen = injection.mode == UpdateMode::Frozen;
    let hp = cfg.optimizer();

    let mut outcome = None;
    for _ in 0..cfg.steps_per_batch {
        let out = if frozen { net.infer(x)? } else { net.forward(x)? };
        let aligned = alignment_loss(stats, &out.features, cfg.lambda)?;
        if !aligned.loss.is_finite() {
            return Err(PaidError::Numeric(format!("alignment loss became {}", aligned.loss)));
        }
        if outcome.is_none() {
            let predictions = argmax_rows(&out.logits);
            let errors = labels.map(|y| predictions.iter().zip(y).filter(|(p, l)| p != l).count());
            outcome = Some(StepOutcome {
                predictions,
                loss: aligned.loss,
                errors,
                sigma_skipped: aligned.sigma_skipped,
            });
        }
        if frozen {
            break;
        }
        let grads = net.backward_features(&aligned.dz)?;
        let lr = if (opt.step as usize) < cfg.warmup_steps {
            0.1 * cfg.learning_rate
        } else {
            cfg.learning_rate
        };
        opt.step(net.learnable_params_mut(), &grads, &hp, lr)?;
        net.validate_params()?;
    }
    Ok(outcome.expect("steps_per_batch is at least 1"))
}

/// One domain segment of a continual run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub domain: String,
    pub severity: u8,
    pub round: usize,
    pub n: usize,
    pub n_batches: usize,
    pub error: f64,
    pub mean_loss: f64,
    /// Mean drift over adapted layers, measured against the pre-trained
    /// weights at the end of the segment.
    pub delta_m: f64,
    pub delta_a: f64,
    pub delta_s: f64,
    pub max_delta_s: f64,
    pub max_gram_deviation: f64,
    pub sigma_skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub segments: Vec<SegmentReport>,
    pub mean_error: f64,
    pub round_errors: Vec<f64>,
    pub wall_time_s: f64,
}

impl AdaptReport {
    pub fn max_delta_s(&self) -> f64 {
        self.segments.iter().map(|s| s.max_delta_s).fold(0.0, f64::max)
    }
}

/// Drift snapshot of every adapted layer against its pre-trained weight.
pub fn drift_snapshot(net: &Network) -> Result<(GeometryDelta, f64, f64)> {
    let mut deltas = Vec::new();
    let mut max_gram = 0.0f64;
    for (_, layer) in net.paid_layers() {
        deltas.push(layer.drift()?);
        max_gram = max_gram.max(layer.gram_deviation()?);
    }
    let max_s = deltas.iter().map(|d| d.delta_s).fold(0.0, f64::max);
    Ok((GeometryDelta::mean(&deltas), max_s, max_gram))
}

/// Streams every segment through `net` in order without resets, adapting
/// after each prediction.
pub fn run_ctta(
    net: &mut Network,
    stream: &DomainStream,
    stats: &SourceStats,
    cfg: &AdaptConfig,
) -> Result<AdaptReport> {
    if stream.is_empty() {
        return Err(PaidError::Config("empty domain stream".into()));
    }
    let started = Instant::now();
    let mut opt = OptimizerState::new();
    let mut segments = Vec::with_capacity(stream.len());
    for segment in stream.segments() {
        let segment = segment?;
        let (mut wrong, mut n, mut loss_sum, mut skipped) = (0, 0, 0.0, 0);
        for (x, y) in &segment.batches {
            let step = adapt_step(net, x, Some(y), stats, cfg, &mut opt)?;
            wrong += step.errors.unwrap_or(0);
            n += y.len();
            loss_sum += step.loss;
            skipped += usize::from(step.sigma_skipped);
        }
        let (drift, max_delta_s, max_gram_deviation) = drift_snapshot(net)?;
        segments.push(SegmentReport {
            domain: segment.corruption.kind.to_string(),
            severity: segment.corruption.severity,
            round: segment.round,
            n,
            n_batches: segment.batches.len(),
            error: wrong as f64 / n as f64,
            mean_loss: loss_sum / segment.batches.len() as f64,
            delta_m: drift.delta_m,
            delta_a: drift.delta_a,
            delta_s: drift.delta_s,
            max_delta_s,
            max_gram_deviation,
            sigma_skipped: skipped,
        });
    }
    let rounds = stream.sequence.rounds;
    let round_errors = (0..rounds)
        .map(|r| {
            let errs: Vec<f64> = segments.iter().filter(|s| s.round == r).map(|s| s.error).collect();
            errs.iter().sum::<f64>() / errs.len() as f64
        })
        .collect();
    let mean_error = segments.iter().map(|s| s.error).sum::<f64>() / segments.len() as f64;
    Ok(AdaptReport {
        segments,
        mean_error,
        round_errors,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Runs the same stream once per mode, in parallel, from the same source
/// network.
pub fn run_mode_ablation(
    source: &Network,
    stream: &DomainStream,
    stats: &SourceStats,
    cfg: &AdaptConfig,
    modes: &[UpdateMode],
) -> Result<Vec<(UpdateMode, AdaptReport)>> {
    modes
        .par_iter()
        .map(|&mode| {
            let cfg = AdaptConfig { mode, ..cfg.clone() };
            let mut net = cfg.inject(source)?;
            Ok((mode, run_ctta(&mut net, stream, stats, &cfg)?))
        })
        .collect()
}
