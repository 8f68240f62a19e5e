//! CLI error type carrying the process exit code.

use thiserror::Error;

/// Exit codes: 2 input error, 3 numerical failure, 4 non-convergence with
/// partial results.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("non-convergence: {0}")]
    NonConvergence(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::NonConvergence(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Numerical(_) => "numerical",
            CliError::NonConvergence(_) => "non-convergence",
        }
    }
}

impl From<hsvar_core::HsvarError> for CliError {
    fn from(e: hsvar_core::HsvarError) -> Self {
        match e {
            hsvar_core::HsvarError::Input(m) => CliError::Input(m),
            hsvar_core::HsvarError::Numerical(m) => CliError::Numerical(m),
            e @ hsvar_core::HsvarError::DegenerateState { .. } => {
                CliError::Numerical(e.to_string())
            }
            hsvar_core::HsvarError::NonConvergence(m) => CliError::NonConvergence(m),
        }
    }
}
