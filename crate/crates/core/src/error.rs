use thiserror::Error;

/// Errors raised by the library. Input validation problems are reported as
/// [`crate::model::Violation`] lists instead, see [`crate::model::validate`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("region is not aligned with the split grid")]
    OffGrid,

    #[error("sampler failure at iteration {iteration}, tree {tree:?}: {message}")]
    Sampler {
        iteration: usize,
        tree: Option<usize>,
        message: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
