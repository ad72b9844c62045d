use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("action {action} outside the action space {space}")]
    ActionOutOfBounds { action: String, space: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The normalization constant of `p_beta(tau; s, a)` is zero.
    #[error("no weighted trajectory contains the pair (state {state}, action {action})")]
    UncoveredPair { state: usize, action: usize },

    #[error("trajectory enumeration exceeded the cap of {cap}")]
    TooManyTrajectories { cap: usize },

    #[error("return statistics are uninitialized (no episode ingested)")]
    EmptyStats,

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("inconsistent configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
