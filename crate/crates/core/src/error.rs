use thiserror::Error;

use crate::schema::ValidationIssue;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("dataset failed validation with {} issue(s); first: {}", .0.len(), .0.first().map(|i| i.to_string()).unwrap_or_default())]
    Validation(Vec<ValidationIssue>),

    #[error("cannot take log of nonpositive value {0}")]
    NonPositiveLog(f64),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("invalid hyperparameters: {0}")]
    Hyper(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invariant violated at iteration {iteration}: {message}")]
    Invariant { iteration: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
