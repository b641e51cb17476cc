use thiserror::Error;

/// Errors produced by the lane geometry, fitting and evaluation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate lane: {0}")]
    DegenerateLane(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("row grids differ")]
    GridMismatch,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("rank deficient: {distinct} distinct abscissae, need {needed}")]
    RankDeficient { distinct: usize, needed: usize },
    #[error("prediction and ground truth share no rows")]
    NoOverlap,
    #[error("objective became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("too few samples: {have} for {want} clusters")]
    TooFewSamples { have: usize, want: usize },
    #[error("schema error at line {line}, field `{path}`: {message}")]
    Schema {
        line: usize,
        path: String,
        message: String,
    },
    #[error("unsupported schema_version {found:?} (expected \"1\")")]
    Version { found: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
