use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use macam_core::activation::ActPath;
use macam_core::workbench::commands::{self, AssignmentSource};
use macam_core::workbench::{load_config, RunConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "macam", version, about = "Mixed analog/digital activation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PathChoice {
    Analog,
    Digital,
}

#[derive(Subcommand)]
enum Command {
    /// Train weights and thresholds with a fixed 0.5/0.5 path blend.
    Warmup(Common),
    /// Search the per-channel path assignment under the energy band.
    Search(Common),
    /// Variation-aware retraining of the searched assignment.
    Retrain(Common),
    /// Clean and noisy test accuracy of the latest (or given) checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate instead of the latest one in --out.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Number of noisy evaluation runs.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Per-layer energy terms of an assignment as CSV.
    EnergyReport {
        #[command(flatten)]
        common: Common,
        /// Assignment file (default: assignment.json in --out).
        #[arg(long, conflicts_with = "all")]
        assignment: Option<PathBuf>,
        /// Put every channel on one path instead of reading a file.
        #[arg(long, value_enum)]
        all: Option<PathChoice>,
    },
    /// Monte-Carlo boundary variation of the configured level table.
    DeviceMc {
        #[command(flatten)]
        common: Common,
        /// Relative boundary std (default: noise.macam_sigma).
        #[arg(long)]
        sigma: Option<f64>,
        /// Monte-Carlo samples (default: noise.mc_samples).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Warmup, search, retrain and eval in sequence.
    Pipeline(Common),
}

fn resolve(common: &Common) -> Result<(RunConfig, &Path)> {
    let mut cfg = load_config(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok((cfg, &common.out))
}

fn print<T: Serialize>(summary: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(summary)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Warmup(c) => {
            let (cfg, out) = resolve(c)?;
            print(&commands::warmup(&cfg, out)?)
        }
        Command::Search(c) => {
            let (cfg, out) = resolve(c)?;
            print(&commands::search(&cfg, out)?)
        }
        Command::Retrain(c) => {
            let (cfg, out) = resolve(c)?;
            print(&commands::retrain(&cfg, out)?)
        }
        Command::Eval {
            common,
            model,
            runs,
        } => {
            let (cfg, out) = resolve(common)?;
            print(&commands::eval(&cfg, out, model.as_deref(), *runs)?)
        }
        Command::EnergyReport {
            common,
            assignment,
            all,
        } => {
            let (cfg, out) = resolve(common)?;
            let source = match (assignment, all) {
                (_, Some(PathChoice::Analog)) => AssignmentSource::Uniform(ActPath::Analog),
                (_, Some(PathChoice::Digital)) => AssignmentSource::Uniform(ActPath::Digital),
                (Some(p), None) => AssignmentSource::File(p.clone()),
                (None, None) => AssignmentSource::File(
                    out.join(macam_core::workbench::artifacts::ASSIGNMENT_FILE),
                ),
            };
            print(&commands::energy_report(&cfg, out, &source)?)
        }
        Command::DeviceMc {
            common,
            sigma,
            samples,
        } => {
            let (cfg, out) = resolve(common)?;
            print(&commands::device_mc(&cfg, out, *sigma, *samples)?)
        }
        Command::Pipeline(c) => {
            let (cfg, out) = resolve(c)?;
            print(&commands::pipeline(&cfg, out)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
