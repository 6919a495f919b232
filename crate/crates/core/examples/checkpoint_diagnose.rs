//! Saves adapted checkpoints for Paid and MagDirFree and compares each with
//! the source weights layer by layer. Paid leaves the pairwise structure
//! untouched; free directions do not.
//!
//!     cargo run --release --example checkpoint_diagnose -- [out_dir]

use std::path::PathBuf;

use paid_core::cli::{cmd_adapt, cmd_diagnose, cmd_pretrain, AdaptOverrides, ExperimentConfig};
use paid_core::paidlayer::UpdateMode;

fn main() -> paid_core::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/examples/diagnose".into()));
    let cfg = ExperimentConfig::load(None)?;
    let source = out.join("source.ckpt");
    cmd_pretrain(&cfg, &source)?;
    for mode in [UpdateMode::Paid, UpdateMode::MagDirFree] {
        let adapted = out.join(format!("{mode}.ckpt"));
        let overrides = AdaptOverrides { mode: Some(mode), ..AdaptOverrides::default() };
        cmd_adapt(&cfg, &source, &overrides, &out.join(mode.to_string()), Some(&adapted))?;
        let d = cmd_diagnose(&source, &adapted, Some(&out.join(format!("{mode}-diagnosis.json"))))?;
        println!("{mode}");
        for l in &d.layers {
            println!(
                "  {:<20} dM {:.3e}  dA {:.3e}  dS {:.3e}",
                l.name, l.delta.delta_m, l.delta.delta_a, l.delta.delta_s
            );
        }
    }
    Ok(())
}
