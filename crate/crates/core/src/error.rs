use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("boundary piece {0} is affine; curvature is identically zero")]
    AffinePiece(usize),

    #[error("relaxation order {order} below minimum {min}")]
    OrderTooSmall { order: usize, min: usize },

    #[error("unsupported dimension {0} (only 2 and 3 are supported)")]
    UnsupportedDimension(usize),

    #[error("gradient vanishes at the cut point; cannot build a separating half-space")]
    DegenerateCut,

    #[error("point is not strictly feasible: {0}")]
    Infeasible(String),

    #[error("did not converge after {iters} iterations: {reason}")]
    NoConvergence {
        iters: usize,
        reason: String,
        best: Option<Vec<f64>>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
