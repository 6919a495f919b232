use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use paid_core::cli::{
    cmd_adapt, cmd_diagnose, cmd_gradcheck, cmd_pretrain, cmd_sweep, AdaptOverrides, ExperimentConfig, SweepGrid,
};
use paid_core::gradcheck::DEFAULT_SIZES;
use paid_core::nnmodel::LayerSelector;
use paid_core::paidlayer::UpdateMode;
use paid_core::Result;

/// Continual test-time adaptation with orthogonally rotated weights.
#[derive(Parser)]
#[command(name = "paid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the source model and write a checkpoint.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream the corruption suite through a checkpointed model.
    Adapt {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        selector: Option<String>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Output stem; writes <stem>.csv and <stem>.json.
        #[arg(long)]
        report: PathBuf,
        /// Also save the adapted weights.
        #[arg(long)]
        save_ckpt: Option<PathBuf>,
    },
    /// Geometry drift between two checkpoints.
    Diagnose {
        #[arg(long)]
        ckpt_a: PathBuf,
        #[arg(long)]
        ckpt_b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
    },
    /// Run a grid of adaptation experiments.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { config, out } => {
            let cfg = ExperimentConfig::load(config.as_deref())?;
            let s = cmd_pretrain(&cfg, &out)?;
            println!("seed {} clean accuracy {:.4} -> {}", s.seed, s.clean_accuracy, out.display());
        }
        Command::Adapt { ckpt, config, mode, selector, rounds, report, save_ckpt } => {
            let cfg = ExperimentConfig::load(config.as_deref())?;
            let overrides = AdaptOverrides {
                mode: mode.map(|m| m.parse::<UpdateMode>()).transpose()?,
                selector: selector.map(|s| s.parse::<LayerSelector>()).transpose()?,
                rounds,
            };
            let r = cmd_adapt(&cfg, &ckpt, &overrides, &report, save_ckpt.as_deref())?;
            for s in &r.segments {
                println!("round {} {:<15} error {:.4}  ΔS {:.2e}", s.round, s.domain, s.error, s.delta_s);
            }
            println!("mean error {:.4}", r.mean_error);
        }
        Command::Diagnose { ckpt_a, ckpt_b, out } => {
            let d = cmd_diagnose(&ckpt_a, &ckpt_b, out.as_deref())?;
            for l in &d.layers {
                println!("{:<20} ΔM {:.3e}  ΔA {:.3e}  ΔS {:.3e}", l.name, l.delta.delta_m, l.delta.delta_a, l.delta.delta_s);
            }
            println!("{:<20} ΔM {:.3e}  ΔA {:.3e}  ΔS {:.3e}", "mean", d.mean.delta_m, d.mean.delta_a, d.mean.delta_s);
        }
        Command::Gradcheck { seed, sizes } => {
            let sizes = if sizes.is_empty() { DEFAULT_SIZES.to_vec() } else { sizes };
            cmd_gradcheck(seed, &sizes, Vec::new(), &mut std::io::stdout())?;
        }
        Command::Sweep { config, grid, out_dir } => {
            let cfg = ExperimentConfig::load(config.as_deref())?;
            let grid = SweepGrid::from_json(&std::fs::read_to_string(&grid)?)?;
            let rows = cmd_sweep(&cfg, &grid, &out_dir)?;
            println!("{} cells -> {}", rows.len(), out_dir.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

