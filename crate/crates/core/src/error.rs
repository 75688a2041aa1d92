//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate data: dimension {dimension} carries no variance")]
    DegenerateData { dimension: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("could not trace a curve: {0}")]
    DegenerateCurve(String),

    #[error("point outside the training support (knn radius {radius:.6e} > limit {limit:.6e})")]
    OutOfSupport { radius: f64, limit: f64 },

    #[error("arc position {requested:.6e} outside the traced range [{min:.6e}, {max:.6e}]")]
    ArcOutOfRange { requested: f64, min: f64, max: f64 },

    #[error(
        "response {requested:.6e} for dimension {dim} beyond the reachable range \
         [{reachable_min:.6e}, {reachable_max:.6e}]"
    )]
    ResponseOutOfRange {
        dim: usize,
        requested: f64,
        reachable_min: f64,
        reachable_max: f64,
    },

    #[error("did not converge: {context}")]
    NonConverged { context: String },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("rank-deficient system: rank {rank}, need {needed}")]
    RankDeficient { rank: usize, needed: usize },

    #[error("csv format error at line {line}: {message}")]
    CsvFormat { line: u64, message: String },

    #[error("model/training mismatch: {0}")]
    TrainingRef(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
