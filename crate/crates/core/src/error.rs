//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: {left} vs {right} ({context})")]
    LengthMismatch {
        left: usize,
        right: usize,
        context: &'static str,
    },

    /// Cholesky factorization failed even after escalating diagonal jitter.
    #[error("kernel matrix is ill-conditioned; attempted jitters {attempted_jitters:?}")]
    IllConditionedKernel { attempted_jitters: Vec<f64> },

    #[error("hyperparameter optimization failed on all restarts: {causes:?}")]
    OptimizationFailed { causes: Vec<String> },

    #[error("degenerate capacity curve for cell {cell_id}: {reason}")]
    DegenerateCurve { cell_id: String, reason: String },

    #[error("all stress dimensions are frozen; no relevance to report")]
    EmptyRelevance,

    #[error("condition schedule covers {covered} Ah but the rollout requires {required} Ah")]
    ScheduleExhausted { covered: f64, required: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed input data: {0}")]
    MalformedData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
