use alloc::string::String;
use alloc::vec::Vec;

use crate::multiindex::ExtMultiIndex;

/// Failures raised by a model backend for a whole batch.
///
/// Per-point failures are not errors at this level; they travel inside
/// [`crate::oracle::EvalResult`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("unknown builtin model `{0}`")]
    UnknownModel(String),
    #[error("fidelity {0} is not provided by this oracle")]
    UnknownFidelity(u32),
    #[error("quantity of interest `{0}` is not provided by this oracle")]
    UnknownQoi(String),
    #[error("oracle protocol violation: {0}")]
    Protocol(String),
    #[error("oracle backend failure: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: String, reason: &'static str },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("parameter space must contain at least one parameter")]
    EmptySpace,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("levels and multi-index components start at 1")]
    ZeroLevel,
    #[error("degenerate knot target: {0}")]
    DegenerateTarget(&'static str),
    #[error("knots {first} and {second} in dimension {dim} coincide")]
    DuplicateKnots { dim: usize, first: f64, second: f64 },
    #[error("value count {got} does not match grid size {expected}")]
    ValueCount { expected: usize, got: usize },
    #[error("multi-index set is not downward closed")]
    NotDownwardClosed,
    #[error("fidelity ladder is invalid: {0}")]
    InvalidFidelities(&'static str),
    #[error("missing oracle evaluations for {} grid point(s), first at {first}", missing.len())]
    MissingEvaluations {
        first: ExtMultiIndex,
        missing: Vec<(ExtMultiIndex, Vec<f64>, String)>,
    },
    #[error("unknown quantity of interest `{0}`")]
    UnknownQoi(String),
    #[error("objective is not finite at the starting point")]
    NonFiniteStart,
    #[error("all {0} optimisation starts failed")]
    AllStartsFailed(usize),
    #[error("numerical failure: {0}")]
    Numerical(&'static str),
    #[error("zero prior band width for `{0}`")]
    ZeroPriorWidth(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
