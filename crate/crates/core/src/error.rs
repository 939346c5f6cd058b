//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("tape usage error: {0}")]
    Tape(String),

    #[error("inner evaluation failed at draw {draw}: {source}")]
    DrawEval {
        draw: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite target log-density at pool index {index}")]
    TargetDensity { index: usize },

    #[error("non-finite gradient estimate at iteration {t}")]
    NonFiniteGradient { t: usize },

    #[error("empty sketch subset")]
    EmptySubset,

    #[error("run aborted at iteration {t}: {source}")]
    Aborted {
        t: usize,
        #[source]
        source: Box<Error>,
        /// Serialized optimizer state at the point of failure, for post-mortem dumps.
        checkpoint: String,
    },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
