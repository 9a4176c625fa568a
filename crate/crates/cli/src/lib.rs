//! Command surface of `cns1d`: configuration, run orchestration and output
//! files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;
pub mod sweep;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{parse_config, ConfigError, RunConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] cns1d::SolverError),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
    #[error("output error: {0}")]
    Csv(#[from] csv::Error),
    #[error("output error: {0}")]
    Diagnostics(#[from] cns1d::diagnostics::DiagnosticsError),
    #[error(transparent)]
    Harness(#[from] cns1d::HarnessError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Usage(_) => EXIT_CONFIG,
            Self::Harness(cns1d::HarnessError::UnknownCriterion(_)) => EXIT_CONFIG,
            _ => EXIT_NUMERICAL,
        }
    }
}

/// Output root: `$CNS1D_OUT` when set, else `cns1d_out` in the working
/// directory.
pub fn output_root() -> PathBuf {
    std::env::var_os("CNS1D_OUT").map_or_else(|| PathBuf::from("cns1d_out"), PathBuf::from)
}
