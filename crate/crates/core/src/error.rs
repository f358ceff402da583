use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the range where a model is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The two-bus power flow has no operating point on the upper branch.
    #[error("infeasible operating point: {0}")]
    Infeasible(String),

    #[error("calibration error: {message}")]
    Calibration {
        message: String,
        /// Offending `(distance, heating time, delta)` rows.
        rows: Vec<(f64, f64, f64)>,
    },

    /// A configuration, run specification or input file failed validation.
    #[error("invalid {what}: {message}")]
    Invalid { what: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Toml(String),
}

impl Error {
    pub(crate) fn invalid(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. }
                | Error::Calibration { .. }
                | Error::Domain(_)
                | Error::Toml(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Toml(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Toml(e.to_string())
    }
}
