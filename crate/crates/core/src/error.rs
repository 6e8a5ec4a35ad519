//! Error type shared by every module.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Malformed or inconsistent run configuration (bad field values,
    /// mask geometry violations, unparseable config file).
    #[error("configuration: {0}")]
    Config(String),

    /// Carleman/weight parameters outside their admissible ranges
    /// (empty interval, violated weight inequality, bad sigma profile).
    #[error("parameter: {0}")]
    Parameter(String),

    /// Field/grid shape mismatch.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A computation produced a non-finite value.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Direct linear solve failed (singular pivot, factorization breakdown).
    #[error("solver: {0}")]
    Solver(String),

    /// Fixed-point or CG iteration exhausted its budget; carries the
    /// residual history for diagnosis.
    #[error("iteration: {message} (last residual {last:?})", last = .history.last())]
    Iteration { message: String, history: Vec<f64> },

    #[error("usage: {0}")]
    Usage(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable class name, also used as process exit code
    /// by the CLI (documented in the README).
    pub fn class(&self) -> (&'static str, i32) {
        match self {
            Error::Usage(_) => ("usage", 2),
            Error::Config(_) => ("config", 3),
            Error::Parameter(_) => ("parameter", 4),
            Error::Dimension(_) => ("dimension", 5),
            Error::Solver(_) => ("solver", 6),
            Error::Iteration { .. } => ("iteration", 7),
            Error::Numeric(_) => ("numeric", 8),
            Error::Io(_) => ("io", 9),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
