use crate::adapt::{compute_source_stats, run_ctta, AdaptConfig, AdaptReport, SourceStats};
use crate::bench::{generate_source, make_domain_sequence, pretrain_source, PretrainReport, SyntheticDataset};
use crate::error::{PaidError, Result};
use crate::nnmodel::Network;
use crate::numkit::SeededRng;

use super::config::ExperimentConfig;

/// A pretrained source model together with the data it was trained on.
#[derive(Clone, Debug)]
pub struct SourceModel {
    pub seed: u64,
    pub net: Network,
    pub train: SyntheticDataset,
    pub test: SyntheticDataset,
    pub pretrain: Option<PretrainReport>,
}

/// Regenerates the seed's data and pretrains a fresh network on it.
pub fn prepare_source(cfg: &ExperimentConfig, seed: u64) -> Result<SourceModel> {
    let (train, test) = generate_source(seed, &cfg.bench.data)?;
    let mut net = Network::build(&cfg.model, &mut SeededRng::new(seed).fork(2))?;
    let report = pretrain_source(&mut net, &train, &test, &cfg.bench.pretrain, seed)?;
    Ok(SourceModel {
        seed,
        net,
        train,
        test,
        pretrain: Some(report),
    })
}

/// Pairs an already trained network with the seed's data.
pub fn attach_source(cfg: &ExperimentConfig, seed: u64, net: Network) -> Result<SourceModel> {
    let (train, test) = generate_source(seed, &cfg.bench.data)?;
    Ok(SourceModel {
        seed,
        net,
        train,
        test,
        pretrain: None,
    })
}

impl SourceModel {
    /// Feature statistics of the first `n` training samples.
    pub fn stats(&self, n: usize) -> Result<SourceStats> {
        if n > self.train.len() {
            return Err(PaidError::Config(format!(
                "{n} source samples requested, {} available",
                self.train.len()
            )));
        }
        let idx: Vec<usize> = (0..n).collect();
        compute_source_stats(&self.net, &[self.train.subset(&idx).samples])
    }

    /// Injects, streams the configured domains and returns the report
    /// together with the adapted network.
    pub fn adapt(&self, cfg: &ExperimentConfig, adapt: &AdaptConfig, rounds: usize) -> Result<(AdaptReport, Network)> {
        let stats = self.stats(adapt.n_source)?;
        let stream = make_domain_sequence(&cfg.bench.domains, rounds, &self.test, adapt.batch_size, self.seed)?;
        let mut net = adapt.inject(&self.net)?;
        let report = run_ctta(&mut net, &stream, &stats, adapt)?;
        Ok((report, net))
    }
}
