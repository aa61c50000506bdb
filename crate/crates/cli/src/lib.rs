//! Command-line harness around `abflab`: configuration, runs, comparison of
//! runs and rate fits.

// `!(x > 0.0)` is used on purpose: NaN must fail these checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod config;
pub mod io;
pub mod rates;
pub mod run;

pub use compare::{compare_runs, Comparison};
pub use config::{ConfigError, ExperimentConfig, RunKind};
pub use run::{run, OutputTarget, RunOutcome};

/// Failure of a harness command, mapped to the process exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}
