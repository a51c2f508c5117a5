use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the engine.
///
/// Every binary-format failure carries the byte offset at which the reader
/// gave up, so a corrupt file can be inspected with a hex dump.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed data at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },

    #[error("truncated data at byte {offset}: expected {expected} more bytes")]
    Truncated { offset: usize, expected: usize },

    #[error("bad magic at byte {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: usize,
        expected: String,
        found: String,
    },

    #[error("unsupported format version {found} at byte {offset} (expected {expected})")]
    VersionMismatch {
        offset: usize,
        found: u32,
        expected: u32,
    },

    #[error("training diverged at step {step} (last finite loss at step {last_good_step})")]
    Diverged { step: usize, last_good_step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
