#![allow(dead_code)]

use std::path::Path;

use paid_core::adapt::{AdaptConfig, AdaptReport, SegmentReport};
use paid_core::bench::{Corruption, CorruptionKind, DataConfig, PretrainConfig};
use paid_core::cli::{BenchConfig, ExperimentConfig};
use paid_core::nnmodel::ModelConfig;

/// Seconds-scale experiment: small data, one block, two domains.
pub fn tiny() -> ExperimentConfig {
    let data = DataConfig { n_train: 300, n_test: 64, ..DataConfig::default() };
    ExperimentConfig {
        model: ModelConfig {
            dim: 16,
            depth: 1,
            heads: 2,
            input_dim: data.input_dim(),
            n_classes: data.n_classes,
            ..ModelConfig::default()
        },
        adapt: AdaptConfig { batch_size: 32, n_source: 100, r: 4, learning_rate: 5e-3, ..AdaptConfig::default() },
        bench: BenchConfig {
            data,
            domains: vec![
                Corruption::new(CorruptionKind::Contrast, 5).unwrap(),
                Corruption::new(CorruptionKind::GaussianNoise, 3).unwrap(),
            ],
            rounds: 1,
            pretrain: PretrainConfig { epochs: 2, warmup_steps: 4, ..PretrainConfig::default() },
        },
        seeds: vec![4],
        ..ExperimentConfig::default()
    }
}

fn segment(domain: &str, severity: u8, round: usize, error: f64, delta_s: f64) -> SegmentReport {
    SegmentReport {
        domain: domain.into(),
        severity,
        round,
        n: 128,
        n_batches: 2,
        error,
        mean_loss: 0.5,
        delta_m: 0.125,
        delta_a: 1e-3,
        delta_s,
        max_delta_s: delta_s,
        max_gram_deviation: 0.0,
        sigma_skipped: 0,
    }
}

pub fn hand_report() -> AdaptReport {
    AdaptReport {
        segments: vec![segment("contrast", 5, 0, 0.25, 0.0), segment("gaussian-noise", 3, 1, 0.1, 2.5e-12)],
        mean_error: 0.175,
        round_errors: vec![0.25, 0.1],
        wall_time_s: 12.5,
    }
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}
