//! Continual test-time adaptation: source statistics, the alignment loss,
//! AdamW and the predict-then-adapt stream loop.

pub mod engine;
pub mod loss;
pub mod optimizer;

pub use engine::{
    adapt_step, drift_snapshot, run_ctta, run_mode_ablation, AdaptConfig, AdaptReport, SegmentReport,
    StepOutcome,
};
pub use loss::{alignment_loss, compute_source_stats, AlignmentLoss, SourceStats};
pub use optimizer::{AdamWParams, OptimizerState, EPS_OPT};
