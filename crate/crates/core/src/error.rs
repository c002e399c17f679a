//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by any operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or mask dimensions are inconsistent with the operation.
    #[error("shape error: {0}")]
    Shape(String),
    /// An argument value violates the operation's preconditions.
    #[error("input error: {0}")]
    Input(String),
    /// A stateful operation was applied in a state that forbids it.
    #[error("state error: {0}")]
    State(String),
    /// A run configuration is internally inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// Training failed, e.g. a non-finite gradient.
    #[error("training error: {0}")]
    Training(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }
}
