use std::path::PathBuf;

use thiserror::Error;

use crate::instance::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Sparse storage or dimension invariants do not hold.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("instance failed validation: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Caller broke a numerical precondition (e.g. nonpositive `t`).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The row search failed to shrink its bracket, which means phi is not
    /// monotone for this row. Always a bug or corrupted input.
    #[error("row subproblem {row} did not converge after {passes} passes (bracket [{lower}, {upper}])")]
    SubproblemStalled {
        row: usize,
        passes: usize,
        lower: f64,
        upper: f64,
    },

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
