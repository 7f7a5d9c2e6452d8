use serde::Serialize;
use thiserror::Error;

/// One problem with one request field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub problem: String,
}

impl FieldError {
    pub fn new(field: &str, problem: impl Into<String>) -> Self {
        FieldError {
            field: field.to_string(),
            problem: problem.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },
    #[error("malformed request")]
    BadRequest(Vec<FieldError>),
    #[error("data directory: {0}")]
    Storage(String),
    #[error(transparent)]
    Engine(#[from] echo_core::EchoError),
    #[error(transparent)]
    Sim(#[from] echo_sim::SimError),
    #[error(transparent)]
    Metrics(#[from] echo_metrics::MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn not_found(kind: &'static str, id: &str) -> Self {
        ServiceError::NotFound {
            kind,
            id: id.to_string(),
        }
    }

    /// Message without the variant prefix.
    pub fn detail(&self) -> String {
        match self {
            ServiceError::Config(s) | ServiceError::Storage(s) => s.clone(),
            other => other.to_string(),
        }
    }

    /// True for problems with the inputs the operator supplied.
    pub fn is_config(&self) -> bool {
        matches!(self, ServiceError::Config(_) | ServiceError::Sim(echo_sim::SimError::Config(_)))
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
