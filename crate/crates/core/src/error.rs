//! Error taxonomy shared by every module.
//!
//! Variants are grouped so a caller (the CLI in particular) can map them onto
//! coarse exit classes: validation problems, numeric failures, and I/O.

use crate::trace::SolveTrace;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Malformed text input (data files, arch strings, configs).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Incompatible array shapes (ragged rows, channel mismatches, ...).
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid argument or precondition violation.
    #[error("invalid argument: {0}")]
    Arg(String),

    /// A size guard against combinatorial blowup was exceeded.
    #[error("size guard exceeded: {0}")]
    Size(String),

    /// No alignment path exists under the requested band constraint.
    #[error("infeasible band: {0}")]
    Band(String),

    /// Operation is not defined for the requested variant (e.g. p = inf gradients).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Architecture string or layer chain is invalid.
    #[error("architecture error: {0}")]
    Arch(String),

    /// A computation produced a non-finite or degenerate value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Solver state violates a precondition (e.g. moving average not warmed up).
    #[error("state error: {0}")]
    State(String),

    /// An iterative solve produced non-finite iterates; carries the partial trace.
    #[error("diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        trace: Box<SolveTrace>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
