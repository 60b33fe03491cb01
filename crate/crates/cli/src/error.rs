use thiserror::Error;

/// Process exit codes.
pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_FORMAT: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] flexq_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("verification failed: {0}")]
    Verify(String),

    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },

    #[error("{context}: {message}")]
    Json { context: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(flexq_core::Error::Format { .. }) => EXIT_FORMAT,
            CliError::Verify(_) => EXIT_VERIFY,
            _ => EXIT_USAGE,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Json { context: "json".into(), message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;
