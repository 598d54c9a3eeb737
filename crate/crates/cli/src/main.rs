//! Command-line driver for beam alignment experiments.

mod commands;
mod config;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "beamalign", version, about = "Probing-codebook beam alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration (a manifest from a previous run also works)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset: "desk" or "paper"
    #[arg(long)]
    preset: Option<String>,
    /// Override the master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match (&self.config, &self.preset) {
            (Some(_), Some(_)) => bail!("pass either --config or --preset, not both"),
            (Some(path), None) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::from_preset(name)?,
            (None, None) => RunConfig::default(),
        };
        base.resolve(self.seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic channel dataset (BACD file)
    Gen {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Train the probing codebook and beam predictor on a dataset
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Dataset file (defaults to the configured path under --out)
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate the configured strategies on the test split
    Eval {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Model file (defaults to the configured path under --out)
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate only the non-learned baselines (no model needed)
    Baseline {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Merge results files into plot-ready curve tables
    Report {
        /// results.json files from eval/baseline runs
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen { common } => {
            let cfg = common.resolve()?;
            commands::cmd_gen(&cfg, &common.out)
        }
        Command::Train { common, dataset } => {
            let cfg = common.resolve()?;
            commands::cmd_train(&cfg, &common.out, dataset.as_deref())
        }
        Command::Eval { common, dataset, model } => {
            let cfg = common.resolve()?;
            commands::cmd_eval(&cfg, &common.out, dataset.as_deref(), model.as_deref(), true)
        }
        Command::Baseline { common, dataset } => {
            let cfg = common.resolve()?;
            commands::cmd_eval(&cfg, &common.out, dataset.as_deref(), None, false)
        }
        Command::Report { inputs, out } => commands::cmd_report(&inputs, &out),
    }
}
