//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} spatial components, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("Kasner relation violated: {relation} (residual {residual:.3e})")]
    KasnerRelation { relation: String, residual: f64 },

    #[error("parameter out of range: {what}")]
    ParameterRange { what: String },

    #[error("gauge condition violated: {what}")]
    GaugeCondition { what: String },

    #[error("time must be positive, got t = {0}")]
    NonPositiveTime(f64),

    #[error("field positivity lost: {what}")]
    Positivity { what: String },

    #[error("singular denominator in parameter solve: {expr} = {value:.3e}")]
    SingularDenominator { expr: String, value: f64 },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("constraint solve failed to converge: {what} (residual {residual:.3e})")]
    ConstraintSolve { what: String, residual: f64 },

    #[error("integration aborted: {0}")]
    Abort(String),

    #[error("search cap exceeded: {0}")]
    SearchCap(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
