use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum CovLabError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("model/metric incompatible: {0}")]
    Incompatible(String),

    #[error("combination not covered by the validity table: {0}")]
    Unrepresentable(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("covariance matrix is singular; duplicated samples at indices {0:?}")]
    Singular(Vec<(usize, usize)>),

    #[error("refusing to simulate: {0}")]
    NotPositiveDefinite(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CovLabError>;
