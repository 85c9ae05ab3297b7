use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{message}")]
    Usage { message: String },
    #[error("cannot read {}: {source}", file.display())]
    Read { file: PathBuf, source: std::io::Error },
    #[error("{}: {message}", file.display())]
    Schema { file: PathBuf, pointer: String, message: String },
    #[error("cannot write {}: {source}", file.display())]
    Write { file: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] groupuq::Error),
}

/// Machine-readable failure report printed on stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub module: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pointer: Option<String>,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage { .. } | CliError::Read { .. } | CliError::Schema { .. } => 2,
            CliError::Write { .. } | CliError::Core(_) => 1,
        }
    }

    pub fn report(&self) -> ErrorReport {
        let message = self.to_string();
        match self {
            CliError::Usage { .. } => ErrorReport { kind: "usage", module: "cli", message, file: None, pointer: None },
            CliError::Read { file, .. } => ErrorReport {
                kind: "io",
                module: "cli",
                message,
                file: Some(file.display().to_string()),
                pointer: None,
            },
            CliError::Schema { file, pointer, .. } => ErrorReport {
                kind: "config",
                module: "cli",
                message,
                file: Some(file.display().to_string()),
                pointer: Some(pointer.clone()),
            },
            CliError::Write { file, .. } => ErrorReport {
                kind: "io",
                module: "cli",
                message,
                file: Some(file.display().to_string()),
                pointer: None,
            },
            CliError::Core(e) => ErrorReport {
                kind: core_kind(e),
                module: e.module(),
                message,
                file: None,
                pointer: None,
            },
        }
    }
}

fn core_kind(e: &groupuq::Error) -> &'static str {
    use groupuq::Error::*;
    match e {
        InvalidConfig(_) | InvalidSweep { .. } | InvalidSpec(_) | InvalidGrouping(_) | InvalidPartition(_)
        | UnsupportedExponent(_) | InvalidFolds { .. } => "config",
        GroupIndex { .. } | InvalidData(_) | UndefinedCorrelation(_) | Parse { .. } => "data",
        OverdeterminedRefit { .. } | NumericFailure(_) | NonConvergence { .. } | EmptyMetrics => "numeric",
        Io(_) | Json(_) => "io",
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
