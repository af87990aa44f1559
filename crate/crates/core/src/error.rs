//! Shared error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("perturbation bank is missing deltas for sample ids {0:?}")]
    MissingDeltas(Vec<u64>),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("integrity check failed for {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },

    #[error("unsupported schema version {found} (this loader supports {supported})")]
    Version { found: u32, supported: u32 },

    /// Training hit a non-finite loss. The record covers the last epoch that
    /// completed cleanly.
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize, record: Box<crate::exploiter::RunRecord> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
