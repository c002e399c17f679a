//! Command-level errors with their exit-code mapping: configuration and
//! validation failures exit 2, runtime failures exit 1.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or input validation failure (exit code 2).
    Config(String),
    /// Runtime failure (exit code 1).
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn config(msg: impl Into<String>) -> CliError {
        CliError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> CliError {
        CliError::Runtime(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {}", msg),
            CliError::Runtime(msg) => write!(f, "error: {}", msg),
        }
    }
}

impl std::error::Error for CliError {}

impl From<alseg_core::Error> for CliError {
    fn from(e: alseg_core::Error) -> CliError {
        match e {
            alseg_core::Error::Config(msg) => CliError::Config(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

/// IO errors carry the path they happened on.
pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {}", path.display(), e))
}
