use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("timestep {t} outside 1..={steps}")]
    Range { t: usize, steps: usize },

    #[error("singular clean-sample estimate at t={t}: {reason}")]
    Singularity { t: usize, reason: &'static str },

    #[error("condition set is empty")]
    EmptyCondition,

    #[error("insufficient data: need at least {needed} pairs, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate fit: source values have zero variance")]
    DegenerateFit,

    #[error("non-finite value in {0}")]
    Numeric(&'static str),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("evaluation mask selects no pixels")]
    EmptyEvaluation,

    #[error("nothing to report: {0}")]
    EmptyReport(String),

    #[error("duplicate sparse position ({row}, {col})")]
    DuplicatePosition { row: usize, col: usize },

    #[error("nonpositive depth {depth} at ({row}, {col})")]
    NonPositiveDepth { row: usize, col: usize, depth: f64 },

    #[error("position ({row}, {col}) outside {height}x{width} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("bridge connection: {0}")]
    Connection(#[source] io::Error),

    #[error("bridge protocol: {0}")]
    Protocol(String),

    #[error("remote denoiser error: {0}")]
    Remote(String),

    #[error("denoiser failed: {0}")]
    Denoiser(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dims(what: impl Into<String>) -> Self {
        Error::Dimension(what.into())
    }

    pub(crate) fn param(what: impl Into<String>) -> Self {
        Error::Parameter(what.into())
    }
}
