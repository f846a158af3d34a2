use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("address fault at {addr:#x}: {reason}")]
    AddressFault { addr: u64, reason: String },

    #[error("configuration fault: {0}")]
    Config(String),

    #[error("job rejected: {0}")]
    JobRejected(String),

    #[error("DMA queue full ({0} outstanding transfers)")]
    QueueFull(usize),

    #[error("timeout after {0} cycles")]
    Timeout(u64),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SimError>;

pub(crate) fn fault(addr: impl Into<u64>, reason: impl Into<String>) -> SimError {
    SimError::AddressFault { addr: addr.into(), reason: reason.into() }
}
