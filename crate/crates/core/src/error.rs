use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("non-finite value in `{slice}`{location}")]
    NumericFault { slice: String, location: String },

    #[error("layout digest mismatch: file has {found}, configuration expects {expected}")]
    DigestMismatch { expected: String, found: String },

    #[error("malformed {what}: {reason}")]
    Parse { what: &'static str, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn numeric(slice: impl Into<String>) -> Self {
        Error::NumericFault {
            slice: slice.into(),
            location: String::new(),
        }
    }

    /// Attach an (episode, step) location to a numeric fault; other errors pass through.
    pub fn at_step(self, episode: usize, step: usize) -> Self {
        match self {
            Error::NumericFault { slice, .. } => Error::NumericFault {
                slice,
                location: format!(" at episode {episode}, step {step}"),
            },
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
