use thiserror::Error;

/// Errors raised by model construction, exact oracles, runs and diagnostics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },

    #[error("chain is not ergodic: {0}")]
    NonErgodic(String),

    #[error("chain does not mix: total-variation distance is not decreasing over the horizon")]
    NonMixing,

    #[error("{what} is singular or ill-conditioned (condition number {condition:e})")]
    Singular { what: &'static str, condition: f64 },

    #[error("behavior policy has no support for action {action} in state {state}")]
    Support { state: usize, action: usize },

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    #[error("insufficient signal: {0}")]
    InsufficientSignal(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
