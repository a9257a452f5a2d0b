use thiserror::Error;

/// Errors emitted by the ribp library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A restricting distribution's support exceeds the truncation level it
    /// was paired with. This is an error rather than a silent truncation
    /// because truncating the support changes the model.
    #[error("restriction support {support_max} exceeds truncation level {truncation}")]
    SupportExceedsTruncation { support_max: usize, truncation: usize },

    #[error("count {count} exceeds table capacity {capacity}")]
    CountExceedsTable { count: usize, capacity: usize },

    #[error("proposal cap {cap} exhausted at row {row}: {hint}")]
    ProposalCapExceeded {
        cap: u64,
        row: usize,
        hint: &'static str,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
