use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the library. Every variant that concerns a bundle names
/// the offending field.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file for `{field}`: {path}")]
    MissingFile { field: String, path: PathBuf },

    #[error("shape mismatch in `{field}`: expected {expected}, found {found}")]
    ShapeMismatch {
        field: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value in `{field}` at flat index {index}")]
    NonFinite { field: String, index: usize },

    #[error("dtype mismatch in `{field}`: manifest says {manifest}, array is {array}")]
    DtypeMismatch {
        field: String,
        manifest: String,
        array: String,
    },

    #[error("malformed npy data in `{field}`: {reason}")]
    Npy { field: String, reason: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("incomparable strategies: {0}")]
    Incomparable(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(field: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            field: field.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code used by the CLI: 2 validation, 3 I/O, 4 incomparable.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::MissingFile { .. } => 3,
            Error::Incomparable(_) => 4,
            _ => 2,
        }
    }
}
