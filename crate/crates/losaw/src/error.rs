//! Crate-wide error type.

use crate::weights::SampleWeights;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate weights: all entries are zero")]
    DegenerateWeights,

    #[error("infeasible threshold {theta} for {n} weights: uniform weight 1/{n} already exceeds it")]
    InfeasibleThreshold { theta: f64, n: usize },

    /// Bisection for the weight threshold ran out of iterations. The best
    /// iterate seen is carried so callers can still proceed with it.
    #[error("threshold search did not converge: best relative ESS {achieved} vs target {target}")]
    SearchDidNotConverge {
        best: SampleWeights,
        achieved: f64,
        target: f64,
    },

    #[error("invalid propensity at index {index}: {value} (must be positive and finite)")]
    InvalidPropensity { index: usize, value: f64 },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("no splits: every tree is a stump")]
    NoSplits,

    #[error("correlation matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("no positive definite block found after {0} resamples")]
    PdRetriesExhausted(usize),

    #[error("joint distribution solver did not converge: constraint residual {constraint_residual:e}, stationarity {stationarity:e} after {iterations} iterations")]
    QpDidNotConverge {
        constraint_residual: f64,
        stationarity: f64,
        iterations: usize,
    },

    #[error("product grid of {0} atoms exceeds the supported maximum of {1}")]
    GridTooLarge(usize, usize),

    #[error("constant response: R^2 is undefined")]
    ConstantResponse,

    #[error("degenerate variance: weighted correlation is undefined")]
    DegenerateVariance,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
