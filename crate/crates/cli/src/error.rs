use std::path::Path;

use qjl::QjlError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const ASSERTION: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config file contents or parameter values.
    #[error("config error: {0}")]
    Config(String),
    /// Unreadable, unwritable, corrupt or mutually inconsistent files.
    #[error("{0}")]
    Io(String),
    /// A validation run finished and at least one assertion failed.
    #[error("{0}")]
    Assertion(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io(_) => exit::IO,
            CliError::Assertion(_) => exit::ASSERTION,
            CliError::Other(_) => exit::FAILURE,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<QjlError> for CliError {
    fn from(e: QjlError) -> Self {
        match e {
            QjlError::InvalidArgument(_) | QjlError::InvalidDimension(_) => {
                CliError::Config(e.to_string())
            }
            QjlError::Io(_) | QjlError::Format(_) | QjlError::DimensionMismatch { .. } => {
                CliError::Io(e.to_string())
            }
            QjlError::InvalidState(_) => CliError::Other(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(format!("writing CSV: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Tags a core error with the file it came from.
pub fn at_path(path: &Path) -> impl Fn(QjlError) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Io(msg) => CliError::io(path, msg),
        other => other,
    }
}
