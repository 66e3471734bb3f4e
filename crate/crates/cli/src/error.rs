use std::fmt;
use std::process::ExitCode;

use polypath_core::Error;

/// Failure of a command, carrying its process exit status.
#[derive(Debug)]
pub enum CliError {
    /// An invariant or comparison did not hold (exit 1).
    Invariant(String),
    /// Bad flags or flag combinations (exit 2).
    Usage(String),
    /// Unreadable or malformed input, or an output that could not be
    /// written (exit 3).
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Invariant(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
        })
    }

    /// Wraps a library error raised while handling `context` (usually a
    /// file path).
    pub fn from_core(context: &str, e: Error) -> Self {
        let msg = format!("{context}: {e}");
        match e {
            Error::Capacity { .. } | Error::Validation(_) => CliError::Usage(msg),
            Error::Numeric(_) => CliError::Invariant(msg),
            _ => CliError::Input(msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invariant(m) => write!(f, "invariant failed: {m}"),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Input(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;
