use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("action arm {arm} has no observations ({context})")]
    MissingArm { arm: u8, context: String },

    #[error("non-finite {what} at observation {index}")]
    NonFinite { index: usize, what: &'static str },

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("no feasible cutoff pair: {0}")]
    Infeasible(String),

    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Whether the error reflects malformed input or configuration rather
    /// than a statistical or runtime failure.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::InvalidInput(_) | Error::DimensionMismatch { .. } | Error::Csv { .. } => true,
            Error::Replicate { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}
