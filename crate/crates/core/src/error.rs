//! Error types shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Vector whose L2 norm is too small to normalize or score.
    #[error("zero vector: L2 norm {norm:.3e} is below {min:.3e}")]
    ZeroVector { norm: f64, min: f64 },

    #[error("insufficient frames: window {window} but only {available} frames")]
    InsufficientFrames { window: usize, available: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("dimension mismatch at line {line}: expected {expected} entries, got {got}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: String,
        expected: String,
        got: String,
    },

    #[error("unknown system tag {0:?}")]
    UnknownSystemTag(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("score set has no {0} scores")]
    EmptyClass(&'static str),

    #[error("degenerate labels: both target and nontarget examples are required")]
    DegenerateLabels,

    #[error("missing checkpoint for system {0}")]
    MissingCheckpoint(String),

    #[error("attention log is empty")]
    EmptyLog,

    #[error("empty condition: the mask selects no rows")]
    EmptyCondition,

    #[error("invalid count or proportion: n = {n}, p = {p}")]
    InvalidCount { n: usize, p: f64 },

    #[error("attribute join failed for {} clip id(s), first: {:?}", .0.len(), .0.first())]
    AttributeJoinFailure(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
