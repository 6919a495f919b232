use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adapt::AdaptReport;
use crate::error::{PaidError, Result};
use crate::geometry::GeometryDelta;
use crate::gradcheck::{default_suite, run_checks, GradcheckReport, NamedCheck, DEFAULT_TOLERANCE};
use crate::nnmodel::{LayerSelector, LayerSlot};
use crate::numkit::Matrix;
use crate::paidlayer::UpdateMode;

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::experiment::{attach_source, prepare_source, SourceModel};
use super::report::{json_err, write_json, write_report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub seed: u64,
    pub clean_accuracy: f64,
    pub final_loss: f64,
    pub steps: usize,
}

/// Trains the source model for the first seed and writes the checkpoint to
/// `out` plus metadata beside it as `<out>.json`.
pub fn cmd_pretrain(cfg: &ExperimentConfig, out: &Path) -> Result<PretrainSummary> {
    let started = Instant::now();
    let seed = cfg.seed();
    let source = prepare_source(cfg, seed)?;
    let report = source.pretrain.as_ref().expect("fresh pretraining");
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Checkpoint::from_network(&source.net)?.save(out)?;
    let summary = PretrainSummary {
        seed,
        clean_accuracy: report.clean_accuracy,
        final_loss: report.step_losses.last().copied().unwrap_or(f64::NAN),
        steps: report.step_losses.len(),
    };
    write_json(
        &sidecar(out),
        &json!({
            "config": cfg,
            "pretrain": summary,
            "metadata": { "wall_time_s": started.elapsed().as_secs_f64() },
        }),
    )?;
    Ok(summary)
}

/// `<path>.json` next to a checkpoint.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Command-line overrides for `adapt`.
#[derive(Clone, Debug, Default)]
pub struct AdaptOverrides {
    pub mode: Option<UpdateMode>,
    pub selector: Option<LayerSelector>,
    pub rounds: Option<usize>,
}

/// Adapts the checkpointed source model over the configured stream and
/// writes `<report>.csv` / `<report>.json`. With `save_ckpt` the adapted
/// weights are written as a checkpoint too.
pub fn cmd_adapt(
    cfg: &ExperimentConfig,
    ckpt: &Path,
    overrides: &AdaptOverrides,
    report: &Path,
    save_ckpt: Option<&Path>,
) -> Result<AdaptReport> {
    let mut cfg = cfg.clone();
    if let Some(m) = overrides.mode {
        cfg.mode = Some(m);
    }
    if let Some(s) = &overrides.selector {
        cfg.selector = Some(s.clone());
    }
    if let Some(r) = overrides.rounds {
        if r == 0 {
            return Err(PaidError::Config("--rounds must be at least 1".into()));
        }
        cfg.bench.rounds = r;
    }
    cfg.validate()?;
    let seed = cfg.seed();
    let net = Checkpoint::load(ckpt)?.to_network(&cfg.model)?;
    let source = attach_source(&cfg, seed, net)?;
    let adapt = cfg.adapt_config(seed)?;
    let (result, adapted) = source.adapt(&cfg, &adapt, cfg.bench.rounds)?;
    write_report(report, &cfg, seed, &result)?;
    if let Some(path) = save_ckpt {
        Checkpoint::from_network(&adapted)?.save(path)?;
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnosis {
    pub name: String,
    #[serde(flatten)]
    pub delta: GeometryDelta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub layers: Vec<LayerDiagnosis>,
    pub mean: GeometryDelta,
}

fn is_projection_weight(name: &str) -> bool {
    let parts: Vec<&str> = name.split('.').collect();
    matches!(parts.as_slice(), ["blocks", i, slot, "weight"]
        if i.parse::<usize>().is_ok() && LayerSlot::ALL.iter().any(|s| s.name() == *slot))
}

/// Drift between the projection weights of two checkpoints.
pub fn diagnose(a: &Checkpoint, b: &Checkpoint) -> Result<Diagnosis> {
    let mut layers = Vec::new();
    for ta in a.tensors.iter().filter(|t| is_projection_weight(&t.name)) {
        let tb = b
            .get(&ta.name)
            .ok_or_else(|| PaidError::Shape(format!("{}: missing from the second checkpoint", ta.name)))?;
        if ta.dims != tb.dims || ta.dims.len() != 2 {
            return Err(PaidError::Shape(format!("{}: {:?} vs {:?}", ta.name, ta.dims, tb.dims)));
        }
        let wa = Matrix::from_vec(ta.dims[0], ta.dims[1], ta.data.clone())?;
        let wb = Matrix::from_vec(tb.dims[0], tb.dims[1], tb.data.clone())?;
        let delta = GeometryDelta::between(&wa, &wb)
            .map_err(|e| PaidError::Numeric(format!("{}: {e}", ta.name)))?;
        layers.push(LayerDiagnosis {
            name: ta.name.clone(),
            delta,
        });
    }
    if let Some(extra) = b.tensors.iter().find(|t| is_projection_weight(&t.name) && a.get(&t.name).is_none()) {
        return Err(PaidError::Shape(format!("{}: missing from the first checkpoint", extra.name)));
    }
    let deltas: Vec<GeometryDelta> = layers.iter().map(|l| l.delta).collect();
    Ok(Diagnosis {
        mean: GeometryDelta::mean(&deltas),
        layers,
    })
}

pub fn cmd_diagnose(ckpt_a: &Path, ckpt_b: &Path, out: Option<&Path>) -> Result<Diagnosis> {
    let d = diagnose(&Checkpoint::load(ckpt_a)?, &Checkpoint::load(ckpt_b)?)?;
    if let Some(path) = out {
        write_json(path, &serde_json::to_value(&d).map_err(json_err)?)?;
    }
    Ok(d)
}

/// Runs the default finite-difference suite plus `extra` checks, printing
/// one line per check. Any failure is a numeric error.
pub fn cmd_gradcheck(
    seed: u64,
    sizes: &[usize],
    extra: Vec<NamedCheck>,
    out: &mut dyn Write,
) -> Result<GradcheckReport> {
    if sizes.iter().any(|&s| s < 2) {
        return Err(PaidError::Config("gradcheck sizes must be at least 2".into()));
    }
    let mut checks = default_suite(seed, sizes);
    checks.extend(extra);
    let report = run_checks(&checks, DEFAULT_TOLERANCE)?;
    for c in &report.checks {
        writeln!(
            out,
            "{:<4} {:<36} max_rel_err={:.3e} ({} values)",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.max_rel_error,
            c.n_values
        )?;
    }
    writeln!(out, "worst {:.3e}, tolerance {:.0e}", report.worst(), report.tolerance)?;
    if !report.passed() {
        return Err(PaidError::Numeric(format!(
            "gradient check failed: {}",
            report.failures().join(", ")
        )));
    }
    Ok(report)
}

/// Axes of a sweep. Empty axes fall back to the experiment config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub r: Vec<usize>,
    pub n_source: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub mode: Vec<UpdateMode>,
    pub selector: Vec<LayerSelector>,
    pub seed: Vec<u64>,
}

impl SweepGrid {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| {
                let path = e.path().to_string();
                PaidError::Config(format!("grid at `{path}`: {}", e.into_inner()))
            })
    }

    /// Every cell in row-major order over (seed, mode, selector, r,
    /// n_source, batch_size).
    pub fn cells(&self, cfg: &ExperimentConfig) -> Vec<SweepCell> {
        let or = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
        let seeds = if self.seed.is_empty() { cfg.seeds.clone() } else { self.seed.clone() };
        let base = cfg.adapt_config(cfg.seed()).unwrap_or_else(|_| cfg.adapt.clone());
        let modes = if self.mode.is_empty() { vec![base.mode] } else { self.mode.clone() };
        let selectors = if self.selector.is_empty() {
            vec![base.selector.clone()]
        } else {
            self.selector.clone()
        };
        let mut out = Vec::new();
        for &seed in &seeds {
            for &mode in &modes {
                for selector in &selectors {
                    for &r in &or(&self.r, base.r) {
                        for &n_source in &or(&self.n_source, base.n_source) {
                            for &batch_size in &or(&self.batch_size, base.batch_size) {
                                out.push(SweepCell {
                                    index: out.len(),
                                    seed,
                                    mode,
                                    selector: selector.clone(),
                                    r,
                                    n_source,
                                    batch_size,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub seed: u64,
    pub mode: UpdateMode,
    pub selector: LayerSelector,
    pub r: usize,
    pub n_source: usize,
    pub batch_size: usize,
}

impl SweepCell {
    /// `base` narrowed to this cell.
    pub fn config(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.seeds = vec![self.seed];
        cfg.mode = Some(self.mode);
        cfg.selector = Some(self.selector.clone());
        cfg.adapt.r = self.r;
        cfg.adapt.n_source = self.n_source;
        cfg.adapt.batch_size = self.batch_size;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(flatten)]
    pub cell: SweepCell,
    pub mean_error: f64,
    pub final_round_error: f64,
    pub max_delta_s: f64,
}

pub const SWEEP_HEADER: [&str; 10] = [
    "cell", "seed", "mode", "selector", "r", "n_source", "batch_size", "mean_error", "final_round_error", "max_delta_s",
];

/// Runs every grid cell (in parallel, each with its own state) and writes
/// `cell-NNN.csv/.json` per cell plus `sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, grid: &SweepGrid, out_dir: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let cells = grid.cells(cfg);
    let mut seeds: Vec<u64> = cells.iter().map(|c| c.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let sources: Vec<SourceModel> = seeds
        .par_iter()
        .map(|&s| prepare_source(cfg, s))
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(out_dir)?;

    let results: Vec<(SweepCell, AdaptReport)> = cells
        .into_par_iter()
        .map(|cell| {
            let source = &sources[seeds.binary_search(&cell.seed).expect("seed was collected")];
            let cell_cfg = cell.config(cfg);
            cell_cfg.validate()?;
            let adapt = cell_cfg.adapt_config(cell.seed)?;
            let (report, _) = source.adapt(&cell_cfg, &adapt, cell_cfg.bench.rounds)?;
            Ok((cell, report))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(results.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER)?;
    for (cell, report) in results {
        write_report(&out_dir.join(format!("cell-{:03}", cell.index)), &cell.config(cfg), cell.seed, &report)?;
        let row = SweepRow {
            mean_error: report.mean_error,
            final_round_error: report.round_errors.last().copied().unwrap_or(f64::NAN),
            max_delta_s: report.max_delta_s(),
            cell,
        };
        w.write_record([
            row.cell.index.to_string(),
            row.cell.seed.to_string(),
            row.cell.mode.to_string(),
            row.cell.selector.to_string(),
            row.cell.r.to_string(),
            row.cell.n_source.to_string(),
            row.cell.batch_size.to_string(),
            row.mean_error.to_string(),
            row.final_round_error.to_string(),
            row.max_delta_s.to_string(),
        ])?;
        rows.push(row);
    }
    let bytes = w.into_inner().map_err(|e| PaidError::Io(e.into_error()))?;
    std::fs::write(out_dir.join("sweep.csv"), bytes)?;
    Ok(rows)
}

