use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hyp3d::Error),
    #[error("config: {0}")]
    Config(String),
    /// A training term evaluated to a non-finite value.
    #[error("non-finite loss term `{term}` at step {step}")]
    NonFiniteTerm { term: String, step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 1 for contract violations, 2 for I/O and format problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(hyp3d::Error::Io(_) | hyp3d::Error::Format { .. }) => 2,
            CliError::Core(_) | CliError::Config(_) | CliError::NonFiniteTerm { .. } => 1,
            CliError::Checkpoint(_) => 1,
            CliError::Parse { .. } | CliError::Json(_) | CliError::Io(_) => 2,
        }
    }
}
