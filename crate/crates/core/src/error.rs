use thiserror::Error;

/// Errors produced anywhere in the sensing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected_h}x{expected_w}, got {actual_h}x{actual_w}")]
    Shape {
        expected_h: usize,
        expected_w: usize,
        actual_h: usize,
        actual_w: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training failed at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("ensemble member {index}: {source}")]
    Member {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite gradient at pixel (row {row}, col {col})")]
    Numerical { row: usize, col: usize },

    #[error("not enough candidates: need {needed} unprobed pixels, {available} available")]
    NoCandidates { needed: usize, available: usize },

    #[error("field role violation: {0}")]
    Role(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(expected: (usize, usize), actual: (usize, usize)) -> Self {
        Error::Shape {
            expected_h: expected.0,
            expected_w: expected.1,
            actual_h: actual.0,
            actual_w: actual.1,
        }
    }
}
