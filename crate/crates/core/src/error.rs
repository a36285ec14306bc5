use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: row {row}: {message}")]
    Schema {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("zero-length trip vector")]
    ZeroLengthVector,
    #[error("insufficient events")]
    InsufficientEvents,
    #[error("no AVL events")]
    NoAvlEvents,
    #[error("insufficient data: {support} samples, {required} required")]
    InsufficientData { support: usize, required: usize },
    #[error("no model")]
    NoModel,
    #[error("unrepairable trip: {0}")]
    Unrepairable(String),
    #[error("unknown preset `{name}`; available: {}", available.join(", "))]
    UnknownPreset { name: String, available: Vec<String> },
}
