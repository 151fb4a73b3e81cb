use thiserror::Error;

/// Errors raised by the analysis engine and its building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Gp3Error {
    #[error("invalid interval: lower bound {lo} exceeds upper bound {hi}")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dimension index {index} out of range for dimension {dim}")]
    InvalidDimensionIndex { index: usize, dim: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid hyperrectangle: {0}")]
    InvalidCell(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("derivative bound inconsistency: lower {lower} > upper {upper}")]
    BoundInconsistency { lower: f64, upper: f64 },

    #[error("non-finite value while {context} at cell center {center:?}")]
    NonFinite { context: String, center: Vec<f64> },

    #[error("integration step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("non-finite state during integration at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("optimizer failure: {0}")]
    Optimizer(String),
}

pub type Result<T> = std::result::Result<T, Gp3Error>;
