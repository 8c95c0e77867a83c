use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid capacity model: {0}")]
    InvalidCapacity(String),

    #[error("invalid cost parameters: {0}")]
    InvalidCost(String),

    #[error("csv row {row}: {reason}")]
    CsvRow { row: usize, reason: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("empty data set")]
    EmptyData,

    #[error("invalid generator parameters: {0}")]
    InvalidGenerator(String),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("feature dimension mismatch: model expects {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite gradient in boosting round {round}")]
    NonFiniteGradient { round: usize },

    #[error("objective {0:?} requires task rewards")]
    MissingRewards(&'static str),

    #[error("degenerate query: ideal DCG is not positive")]
    DegenerateQuery,

    #[error("undefined metric: {0}")]
    Undefined(&'static str),

    #[error("brute-force enumeration supports at most {max} items, got {n}")]
    TooLarge { n: usize, max: usize },

    #[error("split impossible: {0}")]
    Split(String),

    #[error("unsupported model document version {0}")]
    ModelVersion(u32),

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
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
