use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite objective at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("non-finite training loss in epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("barrier outside its domain: F(u) = {value} is not positive")]
    BarrierDomain { value: f64 },

    #[error("no misclassified starting point found after {tries} noise draws")]
    InitializationFailed { tries: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("unexpected end of data while reading {0}")]
    Truncated(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
