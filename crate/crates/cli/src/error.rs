use thiserror::Error;

/// Command failures, each with a stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("dataset not found: {0}")]
    MissingData(String),

    #[error("training diverged: {0}")]
    NonFinite(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Model(hvgnn::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::MissingData(_) => 2,
            Self::NonFinite(_) => 3,
            Self::Checkpoint(_) => 4,
            Self::Usage(_) => 64,
            Self::Config(_) | Self::Model(_) | Self::Io(_) => 1,
        }
    }
}

impl From<hvgnn::Error> for CliError {
    fn from(e: hvgnn::Error) -> Self {
        match e {
            hvgnn::Error::NonFinite(m) => Self::NonFinite(m),
            hvgnn::Error::Config(m) => Self::Config(m),
            other => Self::Model(other),
        }
    }
}
