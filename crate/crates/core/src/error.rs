use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no activation bit-width for layer kind `{0}` in policy")]
    PolicyMiss(String),

    #[error("bit index {index} out of range for a {bits}-bit plane set")]
    Index { index: usize, bits: u8 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("access [{offset}, {offset}+{len}) lies outside the {extent}-byte layout")]
    Bounds { offset: u64, len: u64, extent: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }
}
