//! Trains the source model on the synthetic clean domain, writes it as a
//! checkpoint and shows how much each corruption hurts it at severity 5.
//!
//!     cargo run --release --example source_pretrain -- [out_dir]

use std::path::PathBuf;

use paid_core::bench::{accuracy, Corruption, CorruptionKind, SyntheticDataset};
use paid_core::cli::{cmd_pretrain, Checkpoint, ExperimentConfig};
use paid_core::numkit::SeededRng;

fn main() -> paid_core::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/examples".into()));
    let cfg = ExperimentConfig::load(None)?;
    let ckpt = out.join("source.ckpt");
    let summary = cmd_pretrain(&cfg, &ckpt)?;
    println!(
        "seed {}: {} steps, final loss {:.4}, clean accuracy {:.4}",
        summary.seed, summary.steps, summary.final_loss, summary.clean_accuracy
    );
    println!("checkpoint {}", ckpt.display());

    let net = Checkpoint::load(&ckpt)?.to_network(&cfg.model)?;
    let (_, test) = paid_core::bench::generate_source(summary.seed, &cfg.bench.data)?;
    for kind in CorruptionKind::ALL {
        let c = Corruption::new(kind, 5)?;
        let x = c.apply(&test.samples, &mut SeededRng::new(summary.seed).fork(50))?;
        let acc = accuracy(&net, &SyntheticDataset { samples: x, ..test.clone() })?;
        println!("{:<16} error {:.3}", kind.to_string(), 1.0 - acc);
    }
    Ok(())
}
