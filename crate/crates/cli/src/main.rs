//! `cascade`: command-line front end of the cascade toolkit.

mod commands;
mod output;

use cascade_core::analysis::AnalysisError;
use cascade_core::config::ConfigError;
use cascade_core::montecarlo::SimError;
use cascade_core::tagstream::TagError;
use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Calibration(_) | SimError::Modes(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::InvalidOption(_) | AnalysisError::InvalidHistogram(_) | AnalysisError::MissingCell(..) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<TagError> for CliError {
    fn from(e: TagError) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "cascade", version, about = "Simulate and analyze cascaded down-conversion experiments")]
pub struct Cli {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Second-source mode weights.
    Spectrum,
    /// First-source photon statistics report.
    Stats {
        /// Drive power, e.g. "72.7 mW" (overrides the config).
        #[arg(long)]
        power: Option<String>,
    },
    /// Simulate a projection scan and write tag files.
    Simulate,
    /// Histograms and correlation matrices from tag files.
    Analyze {
        /// scan.json written by `simulate`.
        #[arg(long, conflicts_with = "segment")]
        scan: Option<PathBuf>,
        /// Tag file and its setting, as FILE=ELL_S,ELL_I (repeatable).
        #[arg(long, allow_hyphen_values = true)]
        segment: Vec<String>,
        /// Pump charge for segments given with --segment.
        #[arg(long, allow_hyphen_values = true)]
        pump_ell: Option<i32>,
    },
    /// Compare two matrices (JSON or CSV exports).
    Compare { a: PathBuf, b: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
