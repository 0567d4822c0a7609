use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("parameter `{0}` is frozen and cannot be unfrozen")]
    FrozenParam(String),

    #[error("parameter stores differ: {0}")]
    KeyMismatch(String),

    #[error("loss function is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("checkpoint is missing parameters: {0:?}")]
    MissingKeys(Vec<String>),

    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated data: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("array `{name}`: shape {shape:?} does not match {len} values")]
    LengthMismatch {
        name: String,
        shape: Vec<usize>,
        len: usize,
    },

    #[error("class count mismatch: model has {model}, dataset has {dataset}")]
    ClassMismatch { model: usize, dataset: usize },

    #[error("missing input {0}")]
    MissingInput(PathBuf),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
