use thiserror::Error;

#[derive(Debug, Error)]
pub enum EchoError {
    #[error("invalid feature registry: {0}")]
    Registry(String),
    #[error("invalid catalog: {0}")]
    Catalog(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown impression `{0}`")]
    UnknownImpression(String),
    #[error("event {got} for session `{session}` is out of order (expected {expected})")]
    OutOfOrder {
        session: String,
        expected: u64,
        got: u64,
    },
    #[error("answer does not match feature kind: {0}")]
    KindMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("malformed event log line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = EchoError> = std::result::Result<T, E>;
