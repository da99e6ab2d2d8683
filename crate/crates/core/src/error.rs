use std::path::PathBuf;

/// Errors produced across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or mask dimensions disagree with what an operation requires.
    #[error("dimension error on axis `{axis}`: {msg}")]
    Dimension { axis: &'static str, msg: String },

    /// A layer, block or run was configured with invalid values.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was invoked in the wrong state (e.g. backward without forward).
    #[error("state error: {0}")]
    State(String),

    /// Input data failed validation (labels out of range, non-finite values...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A file could not be decoded.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// A checkpoint was produced for a different model spec.
    #[error("spec mismatch: {0}")]
    SpecMismatch(String),

    /// Dataset samples listed in a manifest are missing on disk.
    #[error("missing samples: {}", .0.join(", "))]
    MissingSamples(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(axis: &'static str, msg: impl Into<String>) -> Self {
        Error::Dimension {
            axis,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
