use thiserror::Error;

/// Errors shared across the crate.
///
/// Certification refusal is deliberately *not* an `Error`: a refusal is a
/// negative answer with a diagnostic, returned as the `Err` side of
/// [`crate::dominance::Refusal`]-typed results.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: program has {expected} variables, point has {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid program: {0}")]
    InvalidProgram(String),

    #[error("degenerate curvature: {0}")]
    DegenerateCurvature(String),

    #[error("unsupported factor for this engine: {0}")]
    Unsupported(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
