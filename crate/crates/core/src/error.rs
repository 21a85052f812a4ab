use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Cumulative probabilities are not monotone, or an observed category has
    /// zero probability. `margin` is the offending margin (0-based) when known.
    #[error("invalid probability region at margin {margin:?}: {detail}")]
    InvalidRegion { margin: Option<usize>, detail: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("degenerate column `{0}`: zero spread")]
    DegenerateColumn(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("too few replicates: {available} available, {required} required")]
    TooFewReplicates { available: usize, required: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(margin: Option<usize>, detail: impl Into<String>) -> Self {
        Error::InvalidRegion {
            margin,
            detail: detail.into(),
        }
    }

    pub fn is_invalid_region(&self) -> bool {
        matches!(self, Error::InvalidRegion { .. })
    }
}
