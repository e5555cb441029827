use std::path::PathBuf;

use thiserror::Error;

use crate::solvers::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong inside the library.
///
/// The variants are grouped by [`ErrorClass`] so front ends can map them to
/// exit codes without matching on every case.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("{what} is not finite at {location}")]
    NonFinite { what: String, location: String },

    #[error(
        "jacobi svd did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})"
    )]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("parse error in {source_name}: {message}")]
    Parse {
        source_name: String,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// Carries the iterates recorded before the loss stopped being finite.
    #[error("optimization diverged at iteration {iteration} (total loss {loss})")]
    Diverged {
        iteration: usize,
        loss: f64,
        partial: Box<SolveReport>,
    },
}

/// Coarse classification of an [`Error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input: unreadable files, malformed contents, mismatched shapes.
    Input,
    /// A numeric precondition or postcondition did not hold.
    Numeric,
    /// An iterative solver produced a non-finite loss.
    Divergence,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Shape { .. } | Error::Parse { .. } | Error::Io { .. } | Error::Csv { .. } => {
                ErrorClass::Input
            }
            Error::Contract(_) | Error::NonFinite { .. } | Error::NoConvergence { .. } => {
                ErrorClass::Numeric
            }
            Error::Diverged { .. } => ErrorClass::Divergence,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(source_name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            message: message.into(),
        }
    }
}
