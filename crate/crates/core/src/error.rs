use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    /// A regularized normal-equation system could not be factored.
    #[error("ill-conditioned system at {what} index {index}")]
    IllConditioned { what: &'static str, index: usize },

    /// The solver objective left the finite range.
    #[error("solver diverged in {step} at iteration {iteration}: objective = {value}")]
    Divergence {
        step: &'static str,
        iteration: usize,
        value: f64,
    },

    #[error("lag curve never crosses threshold {threshold} within {max_lag} lags; extend the maximum lag")]
    NoCrossing { threshold: f64, max_lag: usize },

    #[error("wav error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("unsupported wav encoding: {0}")]
    UnsupportedWav(String),

    #[error("container format error: {0}")]
    Container(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
