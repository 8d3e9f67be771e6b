//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, TdnError>;

/// Errors produced by any layer of the library.
///
/// `Contract` marks violated caller preconditions (a programming error),
/// everything else is a recoverable input, format, or I/O problem.
#[derive(Debug, Error)]
pub enum TdnError {
    /// Incompatible operand shapes, naming both sides.
    #[error("{op}: dimension mismatch ({lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols})")]
    Dim {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// A caller broke an API precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid user-supplied data (bad labels, infeasible spec, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// Malformed on-disk data (bad magic, truncation, shape mismatch).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl TdnError {
    pub(crate) fn dim(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        TdnError::Dim {
            op,
            lhs_rows: lhs.0,
            lhs_cols: lhs.1,
            rhs_rows: rhs.0,
            rhs_cols: rhs.1,
        }
    }
}
