use thiserror::Error;

/// Errors produced by the fitting, simulation and metrics routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("allocation undefined: {0}")]
    AllocationUndefined(String),
    #[error("unreachable loss: target {target} is not above the irreducible loss {floor}")]
    UnreachableLoss { target: f64, floor: f64 },
    #[error("bracketing failure: {0}")]
    Bracket(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("non-finite value at datum {index}: {what}")]
    NonFinite { index: usize, what: String },
    #[error("NNLS did not converge after {iterations} iterations")]
    NnlsNotConverged { iterations: usize, best: Vec<f64> },
    #[error("exponent unidentifiable: {0}")]
    Unidentifiable(String),
    #[error("optimization failed: {0}")]
    Optimization(String),
    #[error("inconsistent reference: {0}")]
    InconsistentReference(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;
