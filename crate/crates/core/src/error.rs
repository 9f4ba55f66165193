use thiserror::Error;

/// Errors raised by the core algorithms.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("{what} is not symmetric positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotSpd { what: String, min_eigenvalue: f64 },

    #[error("{what} is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { what: String, condition: f64 },

    #[error("singular linear system (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("cell `{0}` is unbounded")]
    Unbounded(String),

    #[error("cell `{0}` has an empty interior")]
    EmptyCell(String),

    #[error("cell `{cell}` has duplicate faces {first} and {second}")]
    DuplicateFace {
        cell: String,
        first: usize,
        second: usize,
    },

    #[error("unknown cell `{0}`")]
    UnknownCell(String),

    #[error("no route from `{from}` to `{to}`")]
    Unreachable { from: String, to: String },

    #[error("relative degree mismatch: {0}")]
    RelativeDegree(String),

    #[error("invalid gains: {0}")]
    InvalidGains(String),

    #[error("system is not stabilizable: {0}")]
    NotStabilizable(String),

    #[error("requested {requested} uncorrelated virtual landmarks from {available} sources")]
    TooManyVirtualLandmarks { requested: usize, available: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("synthesis infeasible; most violated constraint `{constraint}` by {violation:.3e}")]
    SynthesisInfeasible { constraint: String, violation: f64 },

    #[error("non-finite state at step {step}: {state}")]
    NonFiniteState { step: usize, state: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            what: what.to_string(),
            expected,
            found,
        })
    }
}
