//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by model construction, estimation and risk evaluation.
#[derive(Debug, Error)]
pub enum HsvarError {
    /// Invalid input: dimension mismatches, out-of-range arguments,
    /// malformed configurations.
    #[error("invalid input: {0}")]
    Input(String),

    /// A numerical operation failed (Cholesky breakdown, singular design,
    /// non-finite intermediate value). The message identifies the offending
    /// state / time index / outcome row where known.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A hidden state has collapsed: its effective sample size is too small
    /// to support the state-specific regression.
    #[error("degenerate state {state}: effective sample size {ess:.4} < {min:.1}")]
    DegenerateState { state: usize, ess: f64, min: f64 },

    /// Estimation did not converge where convergence is required.
    #[error("non-convergence: {0}")]
    NonConvergence(String),
}

pub type Result<T> = std::result::Result<T, HsvarError>;

impl HsvarError {
    pub fn input(msg: impl Into<String>) -> Self {
        HsvarError::Input(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        HsvarError::Numerical(msg.into())
    }
}
