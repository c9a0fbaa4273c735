//! Crate-wide error type.

use crate::mixture::EmTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or config file contents.
    #[error("config error: {0}")]
    Config(String),

    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Symmetric eigendecomposition of a correlation matrix did not converge.
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    /// Degenerate input data (constant samples, zero variance, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A mixture component lost essentially all responsibility mass.
    #[error("mixture component {component} collapsed during EM")]
    ComponentCollapse {
        component: usize,
        trace: Option<Box<EmTrace>>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems,
    /// 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Domain(_)
            | Error::Eigen(_)
            | Error::Degenerate(_)
            | Error::ComponentCollapse { .. } => 3,
            Error::Io(_) => 1,
        }
    }
}
