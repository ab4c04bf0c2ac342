//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a structural invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// An argument violates an operation precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// The effective cascade or channel carries no energy.
    #[error("degenerate system: {0}")]
    Degenerate(String),
    /// The SVD iteration failed to converge.
    #[error("svd failed: {0}")]
    SvdFailure(String),
    /// A bracketing precondition does not hold.
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
