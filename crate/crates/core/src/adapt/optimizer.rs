use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{PaidError, Result};
use crate::nnmodel::Gradients;

pub const EPS_OPT: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with bias correction and decoupled weight decay. Moments are keyed
/// by parameter name, so the order parameters are presented in is
/// irrelevant.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    pub step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update of every parameter that has a gradient; parameters
    /// without one are left alone. `lr` overrides the configured rate.
    pub fn step(
        &mut self,
        params: Vec<(String, &mut [f64])>,
        grads: &Gradients,
        hp: &AdamWParams,
        lr: f64,
    ) -> Result<()> {
        for (name, p) in &params {
            if let Some(g) = grads.get(name) {
                if g.len() != p.len() {
                    return Err(PaidError::Shape(format!(
                        "gradient for {name} has {} entries, parameter has {}",
                        g.len(),
                        p.len()
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - hp.beta1.powi(t);
        let bc2 = 1.0 - hp.beta2.powi(t);
        for (name, p) in params {
            let Some(g) = grads.get(&name) else {
                continue;
            };
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for i in 0..p.len() {
                m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
                v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + EPS_OPT) + lr * hp.weight_decay * p[i];
            }
        }
        Ok(())
    }
}
