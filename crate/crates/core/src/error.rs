use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid tuning parameters (trim fractions, thresholds, schedules).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Matrix or vector dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The input carries no usable information (e.g. an all-zero spectrum).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An iterative routine failed to reach its tolerance.
    #[error("numerical failure: {what} (achieved {achieved:e}, wanted {wanted:e})")]
    Numerical { what: String, achieved: f64, wanted: f64 },

    /// A computation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A decomposition from the linear-algebra backend did not converge.
    #[error("decomposition failed: {0}")]
    Decomposition(String),

    /// Malformed file contents.
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
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

    /// True for failures that originate in floating-point computation
    /// rather than in user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical { .. } | Error::NonFinite(_) | Error::Decomposition(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
