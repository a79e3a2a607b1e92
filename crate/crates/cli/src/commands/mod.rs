//! Subcommand implementations and the shared error-to-exit-code mapping.

pub mod converge;
pub mod rates;
pub mod simulate;
pub mod solve_mfg;
pub mod solve_nplayer;

use std::fmt;
use std::io;

use crate::config::ConfigError;

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Solver(mfglab::Error),
    Io(io::Error),
}

impl RunError {
    /// 2 = configuration error, 3 = solver non-convergence, 4 = numerical
    /// abort. Everything else that prevents a run (I/O, bad preconditions
    /// surfaced by the library) is a configuration-level failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 2,
            RunError::Solver(e) => match e {
                mfglab::Error::NoConvergence { .. } => 3,
                mfglab::Error::NonFinite { .. } | mfglab::Error::SingularRegression { .. } => 4,
                _ => 2,
            },
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(msg) => write!(f, "config error: {msg}"),
            RunError::Solver(e) => write!(f, "solver error: {e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<mfglab::Error> for RunError {
    fn from(e: mfglab::Error) -> Self {
        RunError::Solver(e)
    }
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e)
    }
}

/// Shortest round-trip decimal; CSV cells must re-read to the same bits.
pub fn num(v: f64) -> String {
    format!("{v}")
}
