use thiserror::Error;

#[derive(Debug, Error)]
pub enum DncError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("insufficient speakers: {needed} required, {available} available")]
    InsufficientSpeakers { needed: usize, available: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("attention row {row} has no attendable key")]
    FullyMaskedRow { row: usize },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("no scored time left in `{0}`")]
    ZeroScoredTime(String),

    #[error("no hypothesis for meeting `{0}`")]
    MissingHypothesis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DncError>;
