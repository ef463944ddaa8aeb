use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TuckerError>;

#[derive(Debug, Error)]
pub enum TuckerError {
    #[error("mode {mode} out of range for a {ndims}-way tensor")]
    ModeOutOfRange { mode: usize, ndims: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("tolerance {0} is outside the open interval (0, 1)")]
    InvalidTolerance(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigenvalues are not sorted in non-increasing order")]
    UnsortedEigenvalues,

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("input tensor has zero Frobenius norm")]
    ZeroNorm,

    #[error("columns are not orthonormal (max |QᵀQ - I| = {0:e})")]
    NotOrthonormal(f64),

    #[error("core no longer equals V x_d diag(S): relative deviation {0:e}")]
    CouplingViolation(f64),

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload")]
    TruncatedPayload,

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl TuckerError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        TuckerError::ShapeMismatch(msg.into())
    }
}
