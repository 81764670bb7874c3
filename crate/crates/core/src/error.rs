use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("reflection overshoot in dimension {dim}: {value} is more than one box width outside [{lower}, {upper}]")]
    ReflectionOvershoot {
        dim: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("point outside grid bounds in dimension {dim}: {value}")]
    OutOfBounds { dim: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown {kind} `{name}` (expected one of: {expected})")]
    UnknownName {
        kind: &'static str,
        name: String,
        expected: &'static str,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("non-finite loss on trajectory {index} (head {head}): {dump}")]
    NonFiniteTrajectory { index: usize, head: usize, dump: String },

    #[error("run cancelled")]
    Cancelled,

    #[error("non-finite loss at episode {episode}: {detail}")]
    NonFiniteLoss { episode: usize, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(io::Error::other(e))
    }
}
