use thiserror::Error;

/// Errors produced anywhere in the registration/classification pipeline.
#[derive(Debug, Error)]
pub enum JcrcError {
    /// Malformed input file; `location` names the file and row.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Well-formed input that violates a data-model invariant.
    #[error("invalid data: {0}")]
    Validation(String),

    /// An argument outside the domain of a function (e.g. time outside [0,1]).
    #[error("domain error: {0}")]
    Domain(String),

    /// A warp whose anchor ordinates are not strictly increasing.
    #[error("warp for subject {subject} is not strictly increasing")]
    NonMonotoneWarp { subject: String },

    /// A factorization, solve or optimizer failure.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl JcrcError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        JcrcError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures caused by the numbers rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, JcrcError::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, JcrcError>;
