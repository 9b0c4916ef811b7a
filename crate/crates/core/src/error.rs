use thiserror::Error;

/// Errors produced by the laboratory's numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("parameter `{name}` out of range: {value} (expected {range})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("behaviour policy has zero probability for action {action} at state {state}")]
    ZeroBehaviourProbability { state: usize, action: usize },

    #[error("operator is not contractive (sup rate {0})")]
    NonContractive(f64),

    #[error("linear system is singular: {0}")]
    Singular(&'static str),

    #[error("trajectory too short: {0}")]
    TrajectoryTooShort(String),

    #[error("failed to parse update rule `{0}`")]
    ParseRule(String),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
