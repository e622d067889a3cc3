use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wirl_cli::{cmd_all, cmd_eval, cmd_gen, cmd_train, ExperimentConfig, SweepStatus};

/// Weighted-entropy IRL experiment driver.
///
/// Every subcommand takes an experiment config (JSON); outputs land in the
/// config's output_dir. Worker count is controlled by WIRL_WORKERS.
#[derive(Parser)]
#[command(name = "wirl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate environments and demonstration sets.
    Gen { config: PathBuf },
    /// Train all configured (algorithm, seed, sample-size) cells.
    Train { config: PathBuf },
    /// Evaluate trained models into results.csv and summary.json.
    Eval { config: PathBuf },
    /// gen + train + eval.
    All { config: PathBuf },
}

fn finish(status: SweepStatus) -> ExitCode {
    if status.ok() {
        ExitCode::SUCCESS
    } else {
        for failure in &status.failures {
            eprintln!("cell failed: {failure}");
        }
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> anyhow::Result<ExitCode> {
        Ok(match cli.command {
            Command::Gen { ref config } => {
                cmd_gen(&ExperimentConfig::load(config)?)?;
                ExitCode::SUCCESS
            }
            Command::Train { ref config } => finish(cmd_train(&ExperimentConfig::load(config)?)?),
            Command::Eval { ref config } => finish(cmd_eval(&ExperimentConfig::load(config)?)?),
            Command::All { ref config } => finish(cmd_all(&ExperimentConfig::load(config)?)?),
        })
    };
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
