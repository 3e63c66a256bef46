use thiserror::Error;

/// Errors raised by the samplers, summaries and generators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid interval: lower {lower} must be below upper {upper}")]
    InvalidInterval { lower: f64, upper: f64 },

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design has {columns} columns but only {rows} rows")]
    ConstraintViolation { columns: usize, rows: usize },

    #[error("rank-deficient design ({columns} columns)")]
    RankDeficient { columns: usize },

    #[error("no samples available: {0}")]
    EmptySamples(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("generation failed: {0}")]
    Generation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
