//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Malformed input file; reports the 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Data fails a structural precondition (schema, positivity, ranges).
    #[error("validation error: {0}")]
    Validation(String),

    /// A site lacks subjects in some (z, g) cell or has degenerate prevalence.
    #[error("positivity violation: {0}")]
    Positivity(String),

    /// An inference parameter is out of range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Iterative fit did not converge within the iteration budget.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    /// A numerical operation cannot be completed (singular matrix, zero denominator).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
