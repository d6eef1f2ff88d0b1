//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("zero-norm row before normalization (sample index {row})")]
    ZeroNormRow { row: usize },

    #[error("label {label} out of range [0, {limit})")]
    LabelOutOfRange { label: usize, limit: usize },

    #[error("probability vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{0}")]
    InvalidProbVector(String),

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("class {class} has zero samples")]
    EmptyClass { class: usize },

    #[error("cost matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("separation loss requires at least 2 estimable centroids, got {0}")]
    TooFewCentroids(usize),

    #[error("malformed dataset file at row {row}: {message}")]
    Format { row: usize, message: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss component `{component}` = {value} at step {step}")]
    NonFiniteLoss {
        component: &'static str,
        value: f64,
        step: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
