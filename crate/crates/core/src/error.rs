use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("unknown {kind} `{name}`; expected one of: {allowed}")]
    UnknownName {
        kind: &'static str,
        name: String,
        allowed: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted at step {step}: {reason}")]
    Aborted { step: usize, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
