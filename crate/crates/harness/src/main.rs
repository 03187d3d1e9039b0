use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mstf_core::Variant;
use mstf_harness::run::{self, checkpoint_path};
use mstf_harness::{ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(name = "mstf", version, about = "Trajectory prediction from incomplete histories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluation interval `lo,hi`; repeat to give several. Replaces the configured list.
    #[arg(long = "interval", value_parser = parse_interval)]
    intervals: Vec<[f64; 2]>,
}

#[derive(Args)]
struct WithModel {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "mstf")]
    model: Variant,
    /// Checkpoint to load; defaults to the one `train` writes into the output directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic tracks as CSV.
    GenData(Common),
    /// Train one model and report it against the persistence baseline.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "mstf")]
        model: Variant,
    },
    /// Evaluate a saved checkpoint on the test split.
    Evaluate(WithModel),
    /// Train MSTF and V-TF on identical data and masks.
    Ablate(Common),
    /// Render SVG trajectories for the first test samples.
    Plot {
        #[command(flatten)]
        inner: WithModel,
        #[arg(long, default_value_t = 6)]
        count: usize,
    },
    /// Write evaluation and padding masks.
    ExportMasks(Common),
}

fn parse_interval(s: &str) -> std::result::Result<[f64; 2], String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi}: {e}"))?;
    Ok([lo, hi])
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if !c.intervals.is_empty() {
        cfg.intervals = c.intervals.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint(cfg: &ExperimentConfig, m: &WithModel) -> PathBuf {
    m.checkpoint.clone().unwrap_or_else(|| checkpoint_path(&cfg.out_dir, m.model))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let path = run::gen_data(&load(&c)?)?;
            println!("{}", path.display());
        }
        Command::Train { common, model } => {
            let cfg = load(&common)?;
            let outcome = run::train_and_report(&cfg, model)?;
            println!("wrote {}", outcome.out_dir.display());
        }
        Command::Evaluate(m) => {
            let cfg = load(&m.common)?;
            run::evaluate_checkpoint(&cfg, &checkpoint(&cfg, &m))?;
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::Ablate(c) => {
            let outcome = run::ablate(&load(&c)?)?;
            println!("wrote {}", outcome.out_dir.display());
        }
        Command::Plot { inner, count } => {
            let cfg = load(&inner.common)?;
            for path in run::plot(&cfg, &checkpoint(&cfg, &inner), count)? {
                println!("{}", path.display());
            }
        }
        Command::ExportMasks(c) => {
            for path in run::export_masks(&load(&c)?)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &HarnessError) -> u8 {
    e.exit_code() as u8
}
