//! Experiment configuration, checkpoint and report formats, and the
//! drivers behind the `paid` commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod experiment;
pub mod report;

pub use checkpoint::{Checkpoint, Tensor};
pub use commands::{
    cmd_adapt, cmd_diagnose, cmd_gradcheck, cmd_pretrain, cmd_sweep, diagnose, sidecar, AdaptOverrides,
    Diagnosis, LayerDiagnosis, PretrainSummary, SweepCell, SweepGrid, SweepRow, SWEEP_HEADER,
};
pub use config::{BenchConfig, ExperimentConfig, OutputConfig, SEED_ENV};
pub use experiment::{attach_source, prepare_source, SourceModel};
pub use report::{report_csv, report_json, write_report, without_metadata, CSV_HEADER};
