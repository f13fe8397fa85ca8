//! Spectrally constrained symmetric-matrix optimization via matrix
//! functions and cubic-regularized Newton, applied to a fair robust
//! covariance estimator.

pub mod basis;
pub mod calculus;
pub mod crn;
pub mod data;
pub mod cubic;
pub mod error;
pub mod experiment;
pub mod fairtme;
pub mod matfunc;
pub mod tme;

pub use error::{Error, Result};
