use crate::envpolicy::{Capability, Difficulty};

/// Errors raised by the training kernel.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("capability {0} has no tasks")]
    EmptyCapability(Capability),

    #[error("generation failed for document {doc_id}: {reason}")]
    Generation { doc_id: String, reason: String },

    #[error("invalid reward weights: {0}")]
    InvalidWeights(String),

    #[error("group is empty")]
    EmptyGroup,

    #[error(
        "dataset too small for stratum {capability}/{difficulty}: need {needed}, \
         {available} available after relaxation"
    )]
    InsufficientStratum {
        capability: Capability,
        difficulty: Difficulty,
        needed: usize,
        available: usize,
    },

    #[error("non-finite value at iteration {iteration} in {module}")]
    NonFinite { iteration: u64, module: &'static str },

    #[error("balance score undefined: mean capability score {0} is not positive")]
    NonPositiveMean(f64),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
