//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by estimation, simulation and the application layer.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An input contained NaN or infinite values.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A least-squares subproblem has a (numerically) singular normal matrix.
    #[error("rank-deficient normal matrix in {context} at index {index} (rcond = {rcond:e})")]
    RankDeficient {
        context: &'static str,
        index: usize,
        rcond: f64,
    },

    /// `I - C0` is singular or too badly conditioned to invert.
    #[error("I - C0 is not invertible (condition number {condition:e})")]
    NotInvertible { condition: f64 },

    /// The transition matrix has spectral radius at or above one.
    #[error("model is not stationary: spectral radius {radius}")]
    NonStationary { radius: f64 },

    /// An iterative solver ran out of iterations.
    #[error("{context} did not converge within {iterations} iterations")]
    NoConvergence {
        context: &'static str,
        iterations: usize,
    },

    /// Input has no usable rank-one direction (all zero or similar).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Random model generation exhausted its rejection budget.
    #[error("no stationary draw after {attempts} attempts")]
    Generation { attempts: usize },

    /// Not enough history before the requested day.
    #[error("insufficient history: need {needed} days, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    /// Ingested data is incomplete.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Ingested data is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// A configuration value is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Prices are required but the panel has none.
    #[error("panel has no price column")]
    MissingPrices,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics, as opposed to bad input or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::NotInvertible { .. }
                | Error::NonStationary { .. }
                | Error::NoConvergence { .. }
                | Error::Degenerate(_)
                | Error::Generation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
