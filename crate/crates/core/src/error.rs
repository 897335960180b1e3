use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error at byte {offset}: {reason}")]
    Data { offset: u64, reason: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    /// A message arrived out of sequence. The twin generator can no longer be
    /// reproduced, so this is never recovered from.
    #[error("desync for user {user}: expected step {expected}, got {got}")]
    Desync { user: u32, expected: u64, got: u64 },

    #[error("decode error at byte {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("unsupported dimension {0} (at most 2 supported)")]
    UnsupportedDimension(usize),

    #[error("digest mismatch: {0}")]
    DigestMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
