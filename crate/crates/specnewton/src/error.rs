//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input contained NaN/Inf or was otherwise malformed.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An eigenvalue left the domain of the scalar generator.
    #[error("eigenvalue {value} (index {index}) outside the domain of `{function}`")]
    DomainEigenvalue {
        function: String,
        index: usize,
        value: f64,
    },

    /// Evaluation point outside the domain of an objective (e.g. non-SPD
    /// matrix passed to a log-det term).
    #[error("domain error: {0}")]
    Domain(String),

    /// Bad parameter combination (e.g. alpha >= beta for a bounded interval).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Mismatched matrix/vector dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An iterative numerical routine failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The secular root-finder ran out of iterations; carries the bracket.
    #[error("secular solve did not converge after {iterations} iterations (bracket [{lo}, {hi}])")]
    SecularNonConvergence { iterations: usize, lo: f64, hi: f64 },

    /// Regularization weight grew past its cap without an accepted step.
    #[error("regularization weight exceeded {cap:.0e} at iteration {iteration} without sufficient decrease")]
    Divergence { iteration: usize, cap: f64 },

    /// The estimator does not exist for this data (rank deficiency, n <= p).
    #[error("estimator existence violated: {0}")]
    Existence(String),

    /// A fixed-point solve exhausted its iteration budget.
    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    FixedPointNonConvergence { iterations: usize, residual: f64 },

    /// CSV/numeric parse failure with location.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// Experiment spec failed validation before any solve was attempted.
    #[error("validation error: {0}")]
    Validation(String),

    /// Solution could not be mapped back to the constrained space.
    #[error("degenerate solution: {0}")]
    DegenerateSolution(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
