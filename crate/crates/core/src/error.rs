use thiserror::Error;

#[derive(Debug, Error)]
pub enum MraError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    #[error("undefined phase: coefficient {0} is zero")]
    UndefinedPhase(usize),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("unsupported dataset version {found} (this build reads {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MraError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(MraError::InvalidArgument(msg.into()))
}
