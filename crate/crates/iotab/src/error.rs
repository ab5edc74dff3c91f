//! Error type shared across the library.
//!
//! Variants are grouped by how the command-line driver reports them: bad
//! input data versus a solver that ran out of iterations. Everything else
//! (shape mismatches between library calls) is a programmer error and is
//! handled with assertions at the call site instead.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file could be read but not understood. `line` is 1-based and 0 when
    /// the problem is not tied to a single line.
    #[error("parse error in {path} (line {line}): {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Structurally well-formed input that violates a documented precondition
    /// (inconsistent dimensions, negative populations, unknown variables...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A balancing problem whose constraints cannot be met by any table with
    /// the prior's sign pattern.
    #[error("infeasible balancing problem: {0}")]
    Infeasible(String),

    /// The iterative solver exhausted its budget. `residual` is the best
    /// constraint residual reached (infinity norm, normalized units).
    #[error("solver did not converge after {iterations} iterations (best residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// Bad run configuration (unknown key, unparsable value, missing path).
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }

    /// Process exit code used by the command-line driver: 3 for anything
    /// wrong with the input, 4 when a solve gave up.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoConvergence { .. } => 4,
            _ => 3,
        }
    }
}
