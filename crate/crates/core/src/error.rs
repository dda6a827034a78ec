use thiserror::Error;

use crate::exprparse::{EvalError, ParseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {gap:e}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is numerically singular (condition estimate {condition:e} exceeds {limit:e})")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("time increment must be positive, got t - tau = {dt:e}")]
    NonPositiveTime { dt: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid structural constants: {0}")]
    InvalidConstants(String),

    #[error("degenerate sampling region: {0}")]
    DegenerateRegion(String),

    #[error("grid kernel does not cover time {t} (grid ends at {t_max})")]
    GridCoverage { t: f64, t_max: f64 },

    #[error("non-finite integrand value {value} at node {node:?}")]
    NonFinite { value: f64, node: Vec<f64> },

    #[error("series tail {achieved_tail:e} still above tolerance {tol:e} after {terms} terms")]
    TruncationFailure {
        achieved_tail: f64,
        tol: f64,
        terms: usize,
    },

    #[error("levi iterate {iterate}: {source}")]
    Iterate {
        iterate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("finite-difference setup rejected: {0}")]
    Stability(String),

    #[error("{0}")]
    Parse(#[from] ParseError),

    #[error("{0}")]
    Eval(#[from] EvalError),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
