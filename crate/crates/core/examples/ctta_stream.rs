//! One continual run: the source model meets the six corruptions in turn,
//! predicting each batch before adapting on it. Nothing is reset between
//! domains.
//!
//!     cargo run --release --example ctta_stream -- [rounds]

use paid_core::cli::{prepare_source, ExperimentConfig};

fn main() -> paid_core::Result<()> {
    let rounds: usize = std::env::args().nth(1).map_or(Ok(1), |r| r.parse()).expect("rounds is a number");
    let cfg = ExperimentConfig::load(None)?;
    let seed = cfg.seed();
    let source = prepare_source(&cfg, seed)?;
    let adapt = cfg.adapt_config(seed)?;
    println!(
        "clean accuracy {:.4}; adapting with {} (lr {}, r {}, batch {})",
        source.pretrain.as_ref().map_or(f64::NAN, |p| p.clean_accuracy),
        adapt.mode,
        adapt.learning_rate,
        adapt.r,
        adapt.batch_size
    );
    let (report, _) = source.adapt(&cfg, &adapt, rounds)?;
    println!("{:<6} {:<16} {:>7} {:>8} {:>8} {:>8} {:>9}", "round", "domain", "error", "loss", "dM", "dA", "dS");
    for s in &report.segments {
        println!(
            "{:<6} {:<16} {:>7.3} {:>8.4} {:>8.4} {:>8.4} {:>9.1e}",
            s.round + 1,
            s.domain,
            s.error,
            s.mean_loss,
            s.delta_m,
            s.delta_a,
            s.delta_s
        );
    }
    println!("mean error {:.4} in {:.1}s", report.mean_error, report.wall_time_s);
    Ok(())
}
