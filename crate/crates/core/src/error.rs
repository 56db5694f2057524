use thiserror::Error;

pub type Result<T, E = GmmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("component {index} is degenerate: {reason}")]
    DegenerateComponent { index: usize, reason: String },

    #[error("covariance is not positive definite even after jitter")]
    NotPositiveDefinite,

    #[error("every mixture component was annihilated in a single step")]
    AllKilled,

    #[error("k-means seeding failed: {0}")]
    Seeding(String),

    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
