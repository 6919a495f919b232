use serde::{Deserialize, Serialize};

use crate::error::{PaidError, Result};
use crate::numkit::{Matrix, SeededRng};

/// Recipe for the synthetic source task: small square "images" whose class
/// is carried by a smooth prototype pattern, blurred by per-sample nuisance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_classes: usize,
    /// Image side; samples have `side²` features.
    pub side: usize,
    pub n_train: usize,
    /// Each domain segment streams the whole test split (78 batches of 64
    /// at the default).
    pub n_test: usize,
    /// Blobs per class prototype.
    pub blobs: usize,
    /// Amplitude of the class prototype around mid-gray.
    pub signal: f64,
    /// Weight of the random mixture of other prototypes.
    pub nuisance: f64,
    /// Per-pixel Gaussian noise.
    pub pixel_noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_classes: 6,
            side: 8,
            n_train: 3000,
            n_test: 4992,
            blobs: 3,
            signal: 0.35,
            nuisance: 0.06,
            pixel_noise: 0.05,
        }
    }
}

impl DataConfig {
    pub fn input_dim(&self) -> usize {
        self.side * self.side
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(PaidError::Config("bench.data.n_classes must be at least 2".into()));
        }
        if self.side == 0 || self.n_train == 0 || self.n_test == 0 || self.blobs == 0 {
            return Err(PaidError::Config(
                "bench.data sizes (side, n_train, n_test, blobs) must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub samples: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `idx` as a new dataset.
    pub fn subset(&self, idx: &[usize]) -> SyntheticDataset {
        let cols = self.samples.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(self.samples.row(i));
        }
        SyntheticDataset {
            samples: Matrix::from_vec(idx.len(), cols, data).expect("consistent subset"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            seed: self.seed,
        }
    }

    /// Consecutive batches of at most `size` rows.
    pub fn batches(&self, size: usize) -> Vec<(Matrix, Vec<usize>)> {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.chunks(size.max(1))
            .map(|c| {
                let s = self.subset(c);
                (s.samples, s.labels)
            })
            .collect()
    }

    /// Same samples with class ids renamed through `perm`.
    pub fn relabel(&self, perm: &[usize]) -> SyntheticDataset {
        SyntheticDataset {
            labels: self.labels.iter().map(|&l| perm[l]).collect(),
            ..self.clone()
        }
    }
}

fn prototypes(cfg: &DataConfig, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let side = cfg.side as f64;
    (0..cfg.n_classes)
        .map(|_| {
            let blobs: Vec<(f64, f64, f64, f64)> = (0..cfg.blobs)
                .map(|_| {
                    let cy = rng.uniform() * side;
                    let cx = rng.uniform() * side;
                    let width = 0.8 + rng.uniform() * side / 4.0;
                    let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                    (cy, cx, width, sign)
                })
                .collect();
            let mut p: Vec<f64> = (0..cfg.side * cfg.side)
                .map(|k| {
                    let (y, x) = ((k / cfg.side) as f64 + 0.5, (k % cfg.side) as f64 + 0.5);
                    blobs
                        .iter()
                        .map(|(cy, cx, w, s)| {
                            s * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * w * w)).exp()
                        })
                        .sum()
                })
                .collect();
            let max = p.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
            p.iter_mut().for_each(|v| *v /= max);
            p
        })
        .collect()
}

fn draw(
    cfg: &DataConfig,
    protos: &[Vec<f64>],
    n: usize,
    rng: &mut SeededRng,
    seed: u64,
) -> SyntheticDataset {
    let dim = cfg.input_dim();
    let mut labels: Vec<usize> = (0..n).map(|i| i % cfg.n_classes).collect();
    rng.shuffle(&mut labels);
    let mut data = Vec::with_capacity(n * dim);
    for &c in &labels {
        let amp = cfg.signal * (0.7 + 0.6 * rng.uniform());
        let mix: Vec<f64> = (0..cfg.n_classes).map(|_| cfg.nuisance * rng.gaussian()).collect();
        for k in 0..dim {
            let mut v = 0.5 + amp * protos[c][k];
            for (p, m) in protos.iter().zip(&mix) {
                v += m * p[k];
            }
            v += cfg.pixel_noise * rng.gaussian();
            data.push(v);
        }
    }
    SyntheticDataset {
        samples: Matrix::from_vec(n, dim, data).expect("sized by construction"),
        labels,
        n_classes: cfg.n_classes,
        seed,
    }
}

/// Disjoint train and test splits, deterministic in `seed`. Classes are
/// balanced within one sample.
pub fn generate_source(seed: u64, cfg: &DataConfig) -> Result<(SyntheticDataset, SyntheticDataset)> {
    cfg.validate()?;
    let root = SeededRng::new(seed);
    let protos = prototypes(cfg, &mut root.fork(1));
    let train = draw(cfg, &protos, cfg.n_train, &mut root.fork(2), seed);
    let test = draw(cfg, &protos, cfg.n_test, &mut root.fork(3), seed);
    Ok((train, test))
}
