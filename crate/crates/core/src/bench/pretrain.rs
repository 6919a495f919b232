use serde::{Deserialize, Serialize};

use crate::adapt::optimizer::{AdamWParams, OptimizerState};
use crate::error::{PaidError, Result};
use crate::nnmodel::{argmax_rows, softmax_cross_entropy, Network};
use crate::numkit::SeededRng;

use super::data::SyntheticDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Steps over which the rate ramps linearly up to `learning_rate`.
    pub warmup_steps: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            learning_rate: 2e-3,
            batch_size: 32,
            weight_decay: 0.0,
            warmup_steps: 100,
        }
    }
}

impl PretrainConfig {
    /// Learning rate of the 0-based optimizer step `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            self.learning_rate
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub clean_accuracy: f64,
    pub step_losses: Vec<f64>,
    pub epochs: usize,
}

pub fn accuracy(net: &Network, data: &SyntheticDataset) -> Result<f64> {
    let mut correct = 0;
    for (x, y) in data.batches(256) {
        let pred = argmax_rows(&net.forward_logits(&x)?);
        correct += pred.iter().zip(&y).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Cross-entropy training of every parameter of an uninjected network.
/// Batches are reshuffled each epoch from `seed`.
pub fn pretrain_source(
    net: &mut Network,
    train: &SyntheticDataset,
    test: &SyntheticDataset,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<PretrainReport> {
    if net.injection().is_some() {
        return Err(PaidError::State("cannot pretrain an injected network".into()));
    }
    let hp = AdamWParams {
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..AdamWParams::default()
    };
    let mut opt = OptimizerState::new();
    let mut rng = SeededRng::new(seed).fork(77);
    let mut step_losses = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut idx: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut idx);
        for chunk in idx.chunks(cfg.batch_size.max(1)) {
            let batch = train.subset(chunk);
            let out = net.forward(&batch.samples)?;
            let (loss, dlogits) = softmax_cross_entropy(&out.logits, &batch.labels)?;
            if !loss.is_finite() {
                return Err(PaidError::Numeric(format!(
                    "pretraining diverged at epoch {epoch}, step {}: loss {loss}",
                    step_losses.len()
                )));
            }
            let lr = cfg.lr_at(step_losses.len());
            step_losses.push(loss);
            let grads = net.backward_logits(&dlogits)?;
            opt.step(net.learnable_params_mut(), &grads, &hp, lr)?;
        }
    }
    Ok(PretrainReport {
        clean_accuracy: accuracy(net, test)?,
        step_losses,
        epochs: cfg.epochs,
    })
}
