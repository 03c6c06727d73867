use thiserror::Error;

/// Errors raised across the mapping pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate {coord:?} lies outside the domain bounds")]
    Domain { coord: Vec<f64> },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error(
        "factorization failed after jitter escalation (Gram condition estimate {condition:.3e})"
    )]
    Numerical { condition: f64 },

    #[error("no path found after {iterations} iterations ({nodes} tree nodes, closest approach {closest:.4})")]
    PlannerTimeout {
        iterations: usize,
        nodes: usize,
        closest: f64,
    },

    #[error("episode aborted at step {step}: {reason}")]
    EpisodeAbort { step: usize, reason: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }
}
