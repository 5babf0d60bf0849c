use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {context} at row {row}")]
    NonFinite { context: String, row: usize },

    #[error("insufficient data: need at least {needed} rows, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("column mismatch at position {position}: expected `{expected}`, found `{found}`")]
    ColumnMismatch {
        position: usize,
        expected: String,
        found: String,
    },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("feature extraction failed for {failed} of {total} samples")]
    ExtractionFailed { failed: usize, total: usize },

    #[error("content hash mismatch: recorded {recorded}, computed {computed}")]
    HashMismatch { recorded: String, computed: String },

    #[error("unsupported schema version {found} (newest supported: {supported})")]
    UnsupportedSchema { found: u32, supported: u32 },

    #[error("artifact kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error("non-finite number in artifact payload field `{0}`")]
    NonFinitePayload(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
