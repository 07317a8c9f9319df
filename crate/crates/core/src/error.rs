use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("tensor shape {shape:?} needs {expected} elements, got {found}")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("gradient requested of a non-scalar output (shape {0:?})")]
    NonScalarOutput(Vec<usize>),

    #[error("cannot differentiate through a detached gradient (leaf node {0} is unreachable)")]
    DetachedGradient(usize),

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("invalid model spec: {0}")]
    ModelSpec(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("zero-norm synthetic gradient in layer {0}")]
    ZeroNorm(usize),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated IDX file {path}: needed {needed} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },

    #[error("IDX count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("diverged in round {round}: {source}")]
    Diverged {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
