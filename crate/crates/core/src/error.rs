use alloc::string::String;

pub type Result<T, E = CoreError> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("invalid sample id {id:?}: {reason}")]
    InvalidId { id: String, reason: &'static str },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A value violates a data invariant (negative loss, duplicate id, bad norm, ...).
    #[error("integrity violation: {0}")]
    Integrity(String),

    /// A caller-supplied parameter is out of its domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("epoch {epoch} outside schedule 1..={total}")]
    EpochOutOfRange { epoch: u32, total: u32 },

    #[error("token {token} outside vocabulary of size {vocab}")]
    OutOfVocabulary { token: u32, vocab: usize },

    #[error("row {row} out of range for table with {count} rows")]
    RowOutOfRange { row: usize, count: usize },
}

impl CoreError {
    /// True for errors describing bad data rather than bad parameters.
    pub fn is_integrity(&self) -> bool {
        matches!(
            self,
            CoreError::InvalidId { .. } | CoreError::NonFinite(_) | CoreError::Integrity(_)
        )
    }
}
