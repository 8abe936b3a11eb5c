//! Command-line front end: configuration layering, the five subcommands and
//! the exit-code contract (0 success, 1 failed validation, 2 configuration or
//! run error).

pub mod args;
pub mod commands;
pub mod config;

use std::process::ExitCode;

use thiserror::Error;

pub use args::Cli;
pub use config::{Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Work(#[from] qjwork::work::WorkError),
    #[error(transparent)]
    Cayley(#[from] qjwork::cayley::CayleyError),
    #[error(transparent)]
    Master(#[from] qjwork::master::MasterError),
    #[error(transparent)]
    Stats(#[from] qjwork::stats::StatsError),
    #[error(transparent)]
    Io(#[from] qjwork::io::IoError),
    #[error(transparent)]
    Model(#[from] qjwork::ModelError),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            _ => 2,
        }
    }
}

/// Run a parsed command line and map the outcome to an exit code.
pub fn run(cli: Cli) -> ExitCode {
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qjwork: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
