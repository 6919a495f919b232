use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::adapt::AdaptReport;
use crate::error::{PaidError, Result};

use super::config::ExperimentConfig;

/// Columns of the per-segment CSV report, in order.
pub const CSV_HEADER: [&str; 9] = [
    "domain", "severity", "round", "n", "error", "mean_loss", "delta_m", "delta_a", "delta_s",
];

/// One row per domain segment, floats in shortest round-trip form.
pub fn report_csv(report: &AdaptReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for s in &report.segments {
        w.write_record([
            s.domain.clone(),
            s.severity.to_string(),
            s.round.to_string(),
            s.n.to_string(),
            s.error.to_string(),
            s.mean_loss.to_string(),
            s.delta_m.to_string(),
            s.delta_a.to_string(),
            s.delta_s.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| PaidError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

/// Config echo plus results. Wall-clock timing lives under `metadata` so
/// the rest is reproducible byte for byte.
pub fn report_json(config: &ExperimentConfig, seed: u64, report: &AdaptReport) -> Result<Value> {
    let mut results = serde_json::to_value(report).map_err(json_err)?;
    if let Value::Object(m) = &mut results {
        m.remove("wall_time_s");
    }
    Ok(json!({
        "config": serde_json::to_value(config).map_err(json_err)?,
        "seed": seed,
        "results": results,
        "metadata": { "wall_time_s": report.wall_time_s },
    }))
}

/// Writes `<stem>.csv` and `<stem>.json`; returns both paths.
pub fn write_report(
    stem: &Path,
    config: &ExperimentConfig,
    seed: u64,
    report: &AdaptReport,
) -> Result<(PathBuf, PathBuf)> {
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let csv_path = stem.with_extension("csv");
    let json_path = stem.with_extension("json");
    std::fs::write(&csv_path, report_csv(report)?)?;
    write_json(&json_path, &report_json(config, seed, report)?)?;
    Ok((csv_path, json_path))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(json_err)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// The value with its `metadata` key removed; what determinism is judged on.
pub fn without_metadata(mut value: Value) -> Value {
    if let Value::Object(m) = &mut value {
        m.remove("metadata");
    }
    value
}

pub(crate) fn json_err(e: serde_json::Error) -> PaidError {
    PaidError::Validation(format!("JSON encoding: {e}"))
}
