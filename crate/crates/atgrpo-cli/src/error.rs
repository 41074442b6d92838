//! Error taxonomy with stable process exit codes for scripting:
//! 2 = invalid configuration, 3 = malformed data record, 4 = missing file,
//! 5 = checkpoint schema mismatch, 1 = anything else.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed record in {path} at line {line}: {message}")]
    Record { path: PathBuf, line: usize, message: String },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("checkpoint schema mismatch in {path}: found version {found}, expected {expected}")]
    SchemaMismatch { path: PathBuf, found: String, expected: u32 },
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Record { .. } => 3,
            CliError::MissingFile(_) => 4,
            CliError::SchemaMismatch { .. } => 5,
            CliError::Other(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
