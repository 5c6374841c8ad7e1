use thiserror::Error;

/// Errors raised anywhere in the simulation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("matrix is not positive definite (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("noise tree is full ({capacity} leaves)")]
    TreeFull { capacity: usize },

    #[error("privatized Gram matrix of agent {agent} is indefinite after shift (min eigenvalue {min_eig:.3e})")]
    Calibration { agent: usize, min_eig: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
