//! Std companion to `iacf-core`: file formats, HighD-style ingestion,
//! deterministic SVG plotting, and the `iacf` command-line tool.

use std::fmt;

pub mod formats;
pub mod ingest;
pub mod svg;

/// CLI-level error, carrying the process exit code: 1 usage, 2 data/config,
/// 3 numeric failure.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn data(msg: impl Into<String>) -> CliError {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data/config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<iacf_core::CoreError> for CliError {
    fn from(e: iacf_core::CoreError) -> Self {
        match e {
            iacf_core::CoreError::Argument(m) => CliError::Data(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        let line = e
            .position()
            .map(|p| format!(" at line {}", p.line()))
            .unwrap_or_default();
        CliError::Data(format!("CSV error{line}: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
