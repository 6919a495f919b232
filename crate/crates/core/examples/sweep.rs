//! A small grid over the reflection count and the update mode, written as
//! one report per cell plus an aggregate `sweep.csv`.
//!
//!     cargo run --release --example sweep -- [out_dir]

use std::path::PathBuf;

use paid_core::cli::{cmd_sweep, ExperimentConfig, SweepGrid};

fn main() -> paid_core::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/examples/sweep".into()));
    let cfg = ExperimentConfig::load(None)?;
    let grid = SweepGrid::from_json(r#"{"r": [2, 12], "mode": ["direction-orthogonal", "paid"]}"#)?;
    let rows = cmd_sweep(&cfg, &grid, &out)?;
    println!("{:<5} {:<22} {:>4} {:>10}", "cell", "mode", "r", "mean err");
    for row in &rows {
        println!("{:<5} {:<22} {:>4} {:>10.4}", row.cell.index, row.cell.mode.to_string(), row.cell.r, row.mean_error);
    }
    println!("aggregate {}", out.join("sweep.csv").display());
    Ok(())
}
