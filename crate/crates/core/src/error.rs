use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AuditError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AuditError {
    /// An operation was called outside its domain (empty slice, bad sizes, ...).
    #[error("{0}")]
    Domain(String),

    #[error("source `{source_token}` has {available} samples, {needed} required ({context})")]
    InsufficientSamples {
        source_token: String,
        needed: usize,
        available: usize,
        context: String,
    },

    /// A Subgroup-Level addition found no samples of the subgroup to add.
    #[error("source `{source_token}` has no samples of subgroup `{subgroup}` to add")]
    EmptyAddition { source_token: String, subgroup: String },

    #[error("missing column `{column}`")]
    MissingColumn { column: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("row {row} (line {line}), column `{column}`: {message}")]
    Parse {
        row: usize,
        line: u64,
        column: String,
        message: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AuditError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        AuditError::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AuditError::Io {
            path: path.into(),
            source,
        }
    }
}
