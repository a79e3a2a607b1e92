//! Error taxonomy shared by every solver in the crate.
//!
//! The variants are grouped by how a caller is expected to react:
//! configuration/input problems (`InvalidInput`, `DimensionMismatch`,
//! `SizeCap`, `ExcludedRateCase`) are programming or set-up errors,
//! `NonFinite` signals a numerical abort, and `NoConvergence` reports an
//! iteration budget that ran out (it carries the per-iteration history so
//! the failure can be diagnosed).

use crate::mfg::PicardReport;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A precondition on user-supplied data failed.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Array shapes disagree with the documented layout.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A NaN or infinity surfaced where a finite value is required.
    #[error("non-finite value in {context}{}", location_suffix(*.path, *.step))]
    NonFinite {
        context: &'static str,
        path: Option<usize>,
        step: Option<usize>,
    },

    /// The ridge-augmented normal equations were still numerically singular.
    #[error("singular regression system at time step {step}")]
    SingularRegression { step: usize },

    /// An iterative solver exhausted its budget before reaching tolerance.
    #[error("{solver} did not converge within {iterations} iterations (last distance {last_distance:.3e}, tolerance {tolerance:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        last_distance: f64,
        tolerance: f64,
        /// Per-iteration history when the failing solver is a Picard loop.
        report: Option<Box<PicardReport>>,
    },

    /// Input size exceeds a documented hard cap.
    #[error("{context}: size {n} exceeds cap {cap}")]
    SizeCap {
        context: &'static str,
        n: usize,
        cap: usize,
    },

    /// The `(n, q)` pair falls in a case excluded by the rate formula.
    #[error("rate bound undefined for n = {n}, q = {q}: {reason}")]
    ExcludedRateCase { n: usize, q: f64, reason: String },

    /// Underlying I/O failure while reading or writing an ensemble dump.
    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

fn location_suffix(path: Option<usize>, step: Option<usize>) -> String {
    match (path, step) {
        (Some(p), Some(k)) => format!(" (path {p}, step {k})"),
        (Some(p), None) => format!(" (path {p})"),
        (None, Some(k)) => format!(" (step {k})"),
        (None, None) => String::new(),
    }
}

impl Error {
    /// Convenience constructor for input validation.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
