use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("malformed sample on line {line}: {value:?}")]
    MalformedSample { line: usize, value: String },

    #[error("sample rate must be positive and finite, got {0}")]
    NonPositiveRate(f64),

    #[error("invalid interval [{start}, {end})")]
    InvalidInterval { start: f64, end: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length {0} is not divisible by {1}")]
    IndivisibleLength(usize, usize),

    #[error("input too short: need at least {needed} samples, got {got}")]
    InputTooShort { needed: usize, got: usize },

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("requested events do not fit in the recording: {0}")]
    CapacityExceeded(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedHeader { .. } => "MalformedHeader",
            Error::MalformedSample { .. } => "MalformedSample",
            Error::NonPositiveRate(_) => "NonPositiveRate",
            Error::InvalidInterval { .. } => "InvalidInterval",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::IndivisibleLength(..) => "IndivisibleLength",
            Error::InputTooShort { .. } => "InputTooShort",
            Error::NonFiniteGradient(_) => "NonFiniteGradient",
            Error::EmptyDataset => "EmptyDataset",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::CapacityExceeded(_) => "CapacityExceeded",
            Error::Checkpoint(_) => "Checkpoint",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}
