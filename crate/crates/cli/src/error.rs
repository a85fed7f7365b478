use serde::Serialize;
use thiserror::Error;
use trajopt_core::io::IoError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: file not found")]
    MissingFile { path: String },
    #[error("{0}")]
    Io(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    ModelMismatch(String),
    #[error("{0}")]
    Compute(String),
    #[error("{failed} self-check(s) failed")]
    CheckFailed { failed: usize },
}

/// Machine-readable form written to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingFile { .. } => "missing_file",
            CliError::Io(_) => "io",
            CliError::Config(_) => "config",
            CliError::Format(_) => "format",
            CliError::ModelMismatch(_) => "model_mismatch",
            CliError::Compute(_) => "compute",
            CliError::CheckFailed { .. } => "check_failed",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingFile { .. } => 3,
            CliError::Io(_) => 4,
            CliError::Config(_) => 5,
            CliError::Format(_) => 6,
            CliError::ModelMismatch(_) => 7,
            CliError::Compute(_) => 8,
            CliError::CheckFailed { .. } => 9,
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord { error: self.kind(), exit_code: self.exit_code(), message: self.to_string() }
    }

    pub fn compute(e: impl std::fmt::Display) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::File { path, source } if source.kind() == std::io::ErrorKind::NotFound => CliError::MissingFile { path },
            IoError::File { path, source } => CliError::Io(format!("{path}: {source}")),
            other => CliError::Format(other.to_string()),
        }
    }
}
