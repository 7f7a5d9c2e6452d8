use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("record `{record}` has no labels from source `{source_id}`")]
    MissingSource { record: String, source_id: String },
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no items to evaluate")]
    Empty,
    #[error("option index {index} out of range in record `{record}`")]
    InvalidOption { record: String, index: usize },
    #[error("invalid record `{record}`: {reason}")]
    InvalidRecord { record: String, reason: String },
    #[error("invalid cost input `{method}`: {reason}")]
    InvalidCost { method: String, reason: String },
    #[error("malformed records line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;
