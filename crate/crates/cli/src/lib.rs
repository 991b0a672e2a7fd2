//! Implementation of the `seploss` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 I/O or data error.

pub mod commands;
pub mod corpus;
pub mod manifest;

use std::path::Path;

use seploss_harness::HarnessError;

pub use commands::{cmd_bench, cmd_correlate, cmd_eval, BenchOptions, CorrelateOptions, EvalConfig, EvalOptions, Format};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, names or configuration.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or inconsistent input data.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<seploss::Error> for CliError {
    fn from(e: seploss::Error) -> Self {
        use seploss::Error as E;
        match e {
            E::UnknownLoss(_) | E::Config(_) | E::Missing(_) | E::Domain(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Core(inner) => inner.into(),
            HarnessError::Config(_) => CliError::Usage(e.to_string()),
            HarnessError::Diverged { .. } | HarnessError::Io(_) => CliError::Data(e.to_string()),
        }
    }
}

/// Worker threads: `SEPLOSS_THREADS` if set, otherwise the available parallelism.
pub fn thread_count() -> Result<usize, CliError> {
    match std::env::var("SEPLOSS_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("SEPLOSS_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}
