//! Error types shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Head loss vanished on the listed pipes; the turbulent flow derivatives
    /// are undefined there. `context` identifies the measurement set when
    /// applicable.
    #[error("zero head loss on pipe(s) {pipes:?}{context}")]
    ZeroHeadLoss { pipes: Vec<usize>, context: String },

    #[error("singular system: {message} (condition estimate {condition:.3e})")]
    Singular { message: String, condition: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("conic is not degenerate: determinant {delta:.6e} exceeds tolerance {tol:.3e}")]
    NotDegenerate { delta: f64, tol: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
