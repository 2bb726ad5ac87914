//! Config-driven experiments on Erlang-kernel Hawkes cascades.
//!
//! Each subcommand reads an [`config::ExperimentConfig`], runs its
//! replications in parallel (results are collected in index order, so the
//! output does not depend on the thread count) and writes CSV/text files
//! plus a `manifest.json` with SHA-256 hashes into the output directory.

pub mod commands;
pub mod config;
pub mod output;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use commands::{run, Outcome};
pub use config::{parse_config, ConfigError, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    OracleCompare,
    ValidateMoments,
    Couple,
    DriftCheck,
    MinorizationCheck,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::OracleCompare => "oracle-compare",
            Command::ValidateMoments => "validate-moments",
            Command::Couple => "couple",
            Command::DriftCheck => "drift-check",
            Command::MinorizationCheck => "minorization-check",
            Command::Sweep => "sweep",
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub reps: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Io { path: PathBuf, source: std::io::Error },
    /// A model-level failure while running (domination breach, infeasible
    /// drift constants, quadrature failure).
    Run(cascade_core::Error),
}

impl CliError {
    /// 2 for configuration and I/O problems, 1 for failures of the run itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Run(e) => write!(f, "run failed: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<cascade_core::Error> for CliError {
    fn from(e: cascade_core::Error) -> Self {
        CliError::Run(e)
    }
}

/// Reads and parses a config file.
pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_config(&text)?)
}
