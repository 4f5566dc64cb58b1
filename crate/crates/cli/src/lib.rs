//! Command-line front end: config parsing, seeding, dispatch and output.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable, malformed or invalid configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Failure while computing or writing results.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<sde_lab::Error> for CliError {
    fn from(e: sde_lab::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate subjects and write their statistics or a trajectory.
    Simulate,
    /// Maximum likelihood fit with observed information and a Laplace summary.
    Fit,
    /// Conjugate, dependent, Laplace or Metropolis posterior.
    Posterior,
    /// Run a replicated experiment.
    Experiment,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Posterior => "posterior",
            Command::Experiment => "experiment",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sde-lab", version, about = "Inference for SDE models with Gaussian random effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replaces the seed given in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv", global = true)]
    pub format: Format,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

/// Run one invocation; `Ok` carries the optional stdout summary line.
pub fn run(cli: &Cli) -> Result<Option<String>, CliError> {
    let config = cli.config.as_deref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let out = cli.out.as_deref().ok_or_else(|| CliError::Config("--out is required".into()))?;
    let work = || commands::dispatch(cli.command, config, out, cli.seed, cli.format);
    match cli.threads {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(format!("cannot start thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}
