use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("malformed PPM header: {0}")]
    MalformedHeader(String),
    #[error("truncated pixel data: expected {expected} bytes, got {got}")]
    TruncatedPixelData { expected: usize, got: usize },
    #[error("box [{x1},{x2})x[{y1},{y2}) is out of bounds for a {width}x{height} image")]
    BoxOutOfBounds {
        x1: u32,
        y1: u32,
        x2: u32,
        y2: u32,
        width: u32,
        height: u32,
    },
    #[error("blur radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("raster is empty")]
    EmptyRaster,

    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("template must contain exactly one `{{label}}` placeholder: `{0}`")]
    BadTemplate(String),
    #[error("concept bank needs at least {need} labels, got {got}")]
    TooFewConcepts { need: usize, got: usize },

    #[error("similarity vector is empty")]
    EmptySims,
    #[error("temperature must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("fusion weight must lie in [0, 1], got {0}")]
    BadLambda(f64),

    #[error("batch is empty")]
    EmptyBatch,
    #[error("class `{class}` has {have} candidates, {need} shots requested")]
    InsufficientShots {
        class: String,
        have: usize,
        need: usize,
    },
    #[error("label index {index} out of range for a bank of {k} concepts")]
    LabelOutOfRange { index: usize, k: usize },
    #[error("invalid training configuration: {0}")]
    BadTrainConfig(String),

    #[error("score list is empty")]
    EmptyScores,
    #[error("no ID records available for threshold calibration")]
    NoIdRecords,

    #[error("{}: {message}", location.as_deref().unwrap_or("<input>"))]
    Format {
        location: Option<String>,
        message: String,
    },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("missing embedding `{0}`")]
    MissingEmbedding(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("train pool overlaps the evaluation split: {0}")]
    Overlap(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            location: Some(location.into()),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 3 for data/format problems, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ZeroVector
            | Error::NonFinite(_)
            | Error::NonPositiveTau(_)
            | Error::EmptySims
            | Error::EmptyBatch
            | Error::EmptyScores => 4,
            _ => 3,
        }
    }
}
