use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("degenerate (all-zero) vector{}", .row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    DegenerateVector { row: Option<usize> },

    #[error("insufficient points: need at least {needed}, got {found}")]
    InsufficientPoints { needed: usize, found: usize },

    #[error("{what} index {index} out of range (len {len})")]
    Index { what: &'static str, index: usize, len: usize },

    #[error(
        "max node size {max_node_size} not reached after {iterations} shrink iterations \
         (largest ball still holds {largest_ball} points at epsilon {epsilon:e})"
    )]
    MaxIterations {
        iterations: usize,
        largest_ball: usize,
        max_node_size: usize,
        epsilon: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing embeddings for concepts: {}", .0.join(", "))]
    EmbeddingMissing(Vec<String>),

    #[error("remote error: {0}")]
    Remote(String),

    #[error("authentication failed: {0}")]
    Auth(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse { location: location.into(), message: message.to_string() }
    }
}
