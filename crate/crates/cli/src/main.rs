//! `align-lab`: config-driven experiment runner for CSDA/VCQ
//! semi-supervised self-training.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

mod config;
mod export;
mod runner;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<align_core::data::DataError> for CliError {
    fn from(e: align_core::data::DataError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<align_core::engine::EngineError> for CliError {
    fn from(e: align_core::engine::EngineError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<align_core::model::ModelError> for CliError {
    fn from(e: align_core::model::ModelError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "align-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the runs described by a config file (sweep axes fan out).
    Run {
        /// Path to the experiment config.
        config: PathBuf,
        /// Print the resolved configuration and exit without training.
        #[arg(long)]
        dry_run: bool,
        /// Parallel run slots for seeds and sweep points.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Execute a config that declares at least one `key in [...]` axis.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        dry_run: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Emit tidy plot CSVs from a finished run directory.
    ExportPlots {
        /// Directory holding records.csv or seed-*/records.csv.
        dir: PathBuf,
    },
}

fn load_points(path: &PathBuf, require_axes: bool) -> Result<Vec<config::SweepPoint>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let file = config::parse(&text)?;
    if require_axes && file.axes.is_empty() {
        return Err(CliError::Config(
            "sweep requires at least one `key in [...]` axis".into(),
        ));
    }
    config::expand(&file)
}

fn run(
    path: &PathBuf,
    require_axes: bool,
    dry: bool,
    jobs: usize,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let points = load_points(path, require_axes)?;
    if dry {
        runner::dry_run(&points, seed_override);
        return Ok(());
    }
    let dirs = runner::execute(&points, jobs, seed_override)?;
    for dir in dirs {
        eprintln!("wrote {}", dir.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            dry_run,
            jobs,
            seed_override,
        } => run(&config, false, dry_run, jobs, seed_override),
        Command::Sweep {
            config,
            dry_run,
            jobs,
            seed_override,
        } => run(&config, true, dry_run, jobs, seed_override),
        Command::ExportPlots { dir } => export::export_plots(&dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(message)) => {
            eprintln!("config error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(3)
        }
    }
}
