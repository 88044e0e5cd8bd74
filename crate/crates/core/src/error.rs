use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),

    #[error("reference signal is identically zero")]
    ZeroReference,

    #[error("weight file has bad magic {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("weight file version {found} is not supported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("weight file truncated while reading {context}")]
    Truncated { context: String },

    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor {0} is missing")]
    MissingTensor(String),

    #[error("tensor {0} is not part of this configuration")]
    UnexpectedTensor(String),

    #[error("weight file config does not match: {0}")]
    ConfigMismatch(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("wav error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(
        what: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for errors caused by a malformed or unreadable file (as opposed
    /// to a well-formed file that does not fit the requested configuration).
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::UnsupportedVersion { .. }
                | Error::Truncated { .. }
                | Error::Malformed(_)
                | Error::UnsupportedAudio(_)
                | Error::Wav { .. }
                | Error::Io(_)
        )
    }
}
