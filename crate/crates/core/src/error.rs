//! Crate-wide error type.

use std::fmt;

/// Errors produced by the library.
///
/// Variants are grouped by failure class so that callers (in particular the
/// CLI) can map them to distinct exit codes: configuration and parse problems,
/// data/rank deficiencies, solver convergence failures, and stability
/// violations.
#[derive(Debug)]
pub enum Error {
    /// Incompatible or invalid matrix/vector shapes.
    Dimension(String),
    /// A NaN or infinite entry where a finite value is required.
    NonFinite(String),
    /// Invalid parameters or configuration (bad tolerances, step sizes, ...).
    Config(String),
    /// Malformed text input (matrix files, CSV, sequence files).
    Parse(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// A required rank condition on measured data does not hold.
    DataRank(String),
    /// Randomized generation exhausted its retry budget.
    Generation(String),
    /// An iterative solver stopped above its target residual.
    Convergence {
        what: String,
        residual: f64,
        iterations: usize,
        /// Condition number of the data matrix involved, when known.
        condition: Option<f64>,
    },
    /// A linear system is singular / a solution is not unique.
    Singular(String),
    /// A numerical routine failed (eigenvalue sweep limit, invalid pivot, ...).
    Numerical(String),
    /// A quantity that must be (near-)symmetric or otherwise self-consistent
    /// violated its guard tolerance, signalling bad data or a bad solve.
    Consistency(String),
    /// A Hurwitz-stability precondition is violated.
    Stability(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::DataRank(msg) => write!(f, "data rank error: {msg}"),
            Error::Generation(msg) => write!(f, "generation error: {msg}"),
            Error::Convergence {
                what,
                residual,
                iterations,
                condition,
            } => {
                write!(
                    f,
                    "convergence error: {what} stalled at residual {residual:.3e} after {iterations} iterations"
                )?;
                if let Some(c) = condition {
                    write!(f, " (cond = {c:.3e})")?;
                }
                Ok(())
            }
            Error::Singular(msg) => write!(f, "singular system: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical error: {msg}"),
            Error::Consistency(msg) => write!(f, "consistency error: {msg}"),
            Error::Stability(msg) => write!(f, "stability error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
