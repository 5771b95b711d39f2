//! Crate-wide error type.

use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor dimensions disagree on a specific axis.
    #[error("shape mismatch in {context}: axis {axis} expects {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        axis: usize,
        expected: usize,
        actual: usize,
    },

    /// An operation would produce an empty (zero-sized) result.
    #[error("degenerate shape in {context}: {detail}")]
    DegenerateShape { context: &'static str, detail: String },

    /// Invalid operation parameters (kernel spec, rates, degrees, thresholds...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Inconsistent model or training configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// `backward` was called on a non-scalar tensor.
    #[error("backward requires a scalar loss, got {numel} elements")]
    NotScalar { numel: usize },

    /// A gradient buffer contains NaN; names the parameter so the run is debuggable.
    #[error("NaN gradient in parameter '{path}' at step {step}")]
    NanGradient { path: String, step: u64 },

    /// Exact ACE is an O(N^4) oracle and refuses large images.
    #[error("exact ACE capped at {cap}x{cap}, image is {width}x{height}")]
    OracleSizeCap { width: usize, height: usize, cap: usize },

    /// No pixels to work with (empty patch, empty field of view).
    #[error("empty {what}")]
    Empty { what: &'static str },

    /// AUC is undefined when the ground truth contains a single class.
    #[error("AUC undefined: ground truth inside the FOV has only the {0} class")]
    UndefinedAuc(&'static str),

    /// Malformed PNM payload; offset is the byte position of the problem.
    #[error("PNM decode error at byte {offset}: {msg}")]
    PnmDecode { offset: usize, msg: String },

    /// Dataset layout problem, tagged with the offending sample id.
    #[error("dataset sample '{id}': {msg}")]
    Dataset { id: String, msg: String },

    /// A required file is missing.
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    /// Checkpoint container is malformed or disagrees with the config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
