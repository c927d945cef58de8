use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} index {index} out of range (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("point ({x}, {y}, {z}) lies outside the space of interest")]
    OutOfDomain { x: f64, y: f64, z: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("incomplete critical measurements: missing element {m}, state {k}, block {n}")]
    IncompleteMeasurement { m: usize, k: usize, n: usize },

    #[error("brute-force oracle refuses {0} active blocks (limit {1})")]
    OracleTooLarge(usize, usize),

    #[error("measurement file: {0}")]
    Format(String),

    #[error("scene hash mismatch: measurements were built for a different scene")]
    SceneMismatch,

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
