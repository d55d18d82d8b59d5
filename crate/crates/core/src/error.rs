use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty Hilbert space: {0}")]
    EmptySpace(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("{what} index {index} out of range (count {count})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        count: usize,
    },
    #[error("state carries {found} excitations but the space is the N = {expected} sector")]
    SectorMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("I - S_RL is singular (min |1 - mu| = {0:e})")]
    Singular(f64),
    #[error("operator is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("matrix is not unitary (deviation {0:e})")]
    NotUnitary(f64),
    #[error("task batch has no state pairs")]
    EmptyBatch,
    #[error("signal has zero energy, effective bandwidth undefined")]
    UndefinedBandwidth,
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("non-finite cost at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("all {0} restarts aborted on non-finite cost")]
    AllRestartsFailed(usize),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
