//! Command implementations behind the `semcal` binary.
//!
//! Everything here is a plain function returning an exit code, so the
//! integration and acceptance tests drive the exact code paths the binary
//! runs. Exit-code contract: 0 success, 1 verification failure, 2
//! usage/configuration error, 3 data error.

pub mod checks;
pub mod commands;
pub mod config;
pub mod diagram;

use std::fmt;

/// Failures the CLI distinguishes by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit 2.
    Usage(String),
    /// Unreadable, malformed, or empty input data; exit 3.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Data(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult = Result<i32, CliError>;
