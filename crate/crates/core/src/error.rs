use thiserror::Error;

/// Errors raised by the filter, the front-end and the tooling around them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside of [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("timestamps not strictly increasing at index {index}")]
    NonMonotone { index: usize },

    #[error("plane landmark {landmark} is still anchored in clone {clone}")]
    AnchoredPlane { landmark: u64, clone: u64 },

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: u64 },

    #[error("singular or ill-conditioned system: {0}")]
    Singular(String),

    #[error("rejected: {0}")]
    Rejected(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
