use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("motion rejected: target ({:.4}, {:.4}, {:.4}) outside workspace", .0.x, .0.y, .0.z)]
    MotionRejected(Vec3),

    #[error("malformed {what} at line {line}: {message}")]
    Parse {
        what: &'static str,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Prefixes a configuration key with the block it was found in.
    pub fn within(self, block: &str) -> Self {
        match self {
            Error::Config { key, message } => Error::config(format!("{block}.{key}"), message),
            other => other,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
