use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptConfig;
use crate::bench::{Corruption, DataConfig, PretrainConfig};
use crate::error::{PaidError, Result};
use crate::nnmodel::{LayerSelector, ModelConfig};
use crate::paidlayer::UpdateMode;

pub const SEED_ENV: &str = "PAID_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub data: DataConfig,
    pub domains: Vec<Corruption>,
    pub rounds: usize,
    pub pretrain: PretrainConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            domains: Corruption::default_suite(),
            rounds: 1,
            pretrain: PretrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

/// One JSON document describing a full experiment. Top-level `mode` and
/// `selector`, when present, override the ones inside `adapt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub adapt: AdaptConfig,
    pub bench: BenchConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selector: Option<LayerSelector>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<UpdateMode>,
    pub seeds: Vec<u64>,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let bench = BenchConfig::default();
        Self {
            model: ModelConfig {
                input_dim: bench.data.input_dim(),
                n_classes: bench.data.n_classes,
                ..ModelConfig::default()
            },
            adapt: AdaptConfig::default(),
            bench,
            selector: None,
            mode: None,
            seeds: vec![0],
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON document. Errors name the offending
    /// path, e.g. `adapt.lambdaa`.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            PaidError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or the defaults when `None`, then applies `PAID_SEED`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_json(&std::fs::read_to_string(p)?)?,
            None => Self::default(),
        };
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    /// Replaces the seed list with a single seed parsed from `value`.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| PaidError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
            self.seeds = vec![seed];
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.bench.data.validate()?;
        self.adapt_config(self.seed())?;
        if self.model.input_dim != self.bench.data.input_dim() {
            return Err(PaidError::Config(format!(
                "model.input_dim is {} but bench.data produces {} features",
                self.model.input_dim,
                self.bench.data.input_dim()
            )));
        }
        if self.model.n_classes != self.bench.data.n_classes {
            return Err(PaidError::Config(format!(
                "model.n_classes is {} but bench.data has {} classes",
                self.model.n_classes, self.bench.data.n_classes
            )));
        }
        if self.bench.domains.is_empty() || self.bench.rounds == 0 {
            return Err(PaidError::Config("bench needs at least one domain and one round".into()));
        }
        for d in &self.bench.domains {
            d.validate()?;
        }
        if self.seeds.is_empty() {
            return Err(PaidError::Config("seeds must list at least one seed".into()));
        }
        if self.adapt.n_source > self.bench.data.n_train {
            return Err(PaidError::Config(format!(
                "adapt.n_source {} exceeds bench.data.n_train {}",
                self.adapt.n_source, self.bench.data.n_train
            )));
        }
        Ok(())
    }

    /// First configured seed.
    pub fn seed(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    /// The adaptation settings for one seed with top-level overrides applied.
    pub fn adapt_config(&self, seed: u64) -> Result<AdaptConfig> {
        let mut cfg = self.adapt.clone();
        if let Some(s) = &self.selector {
            cfg.selector = s.clone();
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }
}
