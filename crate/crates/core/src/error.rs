use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("covariance not positive definite at t={time} (smallest eigenvalue estimate {min_eigenvalue:e})")]
    NotPositiveDefinite { time: f64, min_eigenvalue: f64 },

    #[error("singular matrix")]
    Singular,

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
