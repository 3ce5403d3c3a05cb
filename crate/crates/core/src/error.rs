use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("schema: {0}")]
    Schema(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no samples of group {group} at client {client}")]
    EmptyCell { group: usize, client: usize },

    #[error("constraint {probe} is unbuildable: zero probability {cell}")]
    DegenerateProbe { probe: String, cell: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("partition failed: {0}")]
    Partition(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config: {0}")]
    Config(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("combinatorial budget exceeded: {0}")]
    Budget(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
