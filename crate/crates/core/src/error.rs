use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the solver, trainer and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("instance with n = {n} exceeds the exhaustive-search limit of {limit} spins")]
    SizeLimit { n: usize, limit: usize },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },

    #[error("batch item {item} diverged at step {step}")]
    ItemDivergence { item: usize, step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("fit domain error: {0}")]
    FitDomain(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numerics rather than by inputs.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::ItemDivergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
