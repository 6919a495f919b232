//! Every update mode on the same source model and stream: which geometric
//! components are allowed to move, and what that does to the error.
//!
//!     cargo run --release --example mode_ablation -- [seed]

use paid_core::adapt::run_mode_ablation;
use paid_core::bench::make_domain_sequence;
use paid_core::cli::{prepare_source, ExperimentConfig};
use paid_core::paidlayer::UpdateMode;

fn main() -> paid_core::Result<()> {
    let mut cfg = ExperimentConfig::load(None)?;
    if let Some(seed) = std::env::args().nth(1) {
        cfg.apply_seed_override(Some(&seed))?;
    }
    let seed = cfg.seed();
    let source = prepare_source(&cfg, seed)?;
    let adapt = cfg.adapt_config(seed)?;
    let stats = source.stats(adapt.n_source)?;
    let stream = make_domain_sequence(&cfg.bench.domains, 1, &source.test, adapt.batch_size, seed)?;
    let results = run_mode_ablation(&source.net, &stream, &stats, &adapt, &UpdateMode::ALL)?;
    println!("{:<22} {:>10} {:>9} {:>9}", "mode", "mean err", "dA", "max dS");
    for (mode, report) in &results {
        let last = report.segments.last().expect("non-empty stream");
        println!(
            "{:<22} {:>10.4} {:>9.4} {:>9.1e}",
            mode.to_string(),
            report.mean_error,
            last.delta_a,
            report.max_delta_s()
        );
    }
    Ok(())
}
