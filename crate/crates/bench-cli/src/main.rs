//! Experiment harness CLI: run seeded training comparisons from a TOML
//! config, probe variance reduction, dump score-correlation data, and run
//! the oracle validation suite.

mod config;
mod runner;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use config::ExperimentFile;

#[derive(Parser)]
#[command(name = "impsgd-bench", version, about = "Importance-sampling SGD experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `experiment.output` from the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Base sampling seed; overrides `train.seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured arm and emit JSONL metrics plus a summary.
    Train(RunArgs),
    /// Measure gradient-distance variance reduction per scoring policy.
    VarianceProbe(RunArgs),
    /// Dump per-sample score probabilities against the gradient-norm oracle.
    Correlate(RunArgs),
    /// Run the brute-force oracle suite; nonzero exit on any failure.
    Validate,
}

impl RunArgs {
    fn load(&self) -> Result<(ExperimentFile, PathBuf)> {
        let file = ExperimentFile::load(&self.config)?;
        let output = match self.output.clone().or_else(|| file.experiment.output.clone()) {
            Some(dir) => dir,
            None => bail!("no output directory: pass --output or set experiment.output"),
        };
        Ok((file, output))
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let (file, output) = args.load()?;
            runner::run_train(&file, &output, args.seed)
        }
        Command::VarianceProbe(args) => {
            let (file, output) = args.load()?;
            runner::run_variance_probe(&file, &output, args.seed)
        }
        Command::Correlate(args) => {
            let (file, output) = args.load()?;
            runner::run_correlate(&file, &output, args.seed)
        }
        Command::Validate => {
            if runner::run_validate()? {
                Ok(())
            } else {
                std::process::exit(1);
            }
        }
    }
}
