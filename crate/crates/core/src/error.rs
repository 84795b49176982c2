use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quantization parameters: {0}")]
    InvalidQuantParams(String),

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("scale ratio {ratio} cannot be represented as a fixed-point multiplier")]
    UnrepresentableScale { ratio: f64 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("accumulator {value} exceeds {bits}-bit range")]
    AccumulatorOverflow { value: i128, bits: u32 },

    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("invalid dataset spec: {0}")]
    InvalidDatasetSpec(String),

    #[error("invalid signal parameters: {0}")]
    InvalidSignal(String),

    #[error("zero target in metric evaluation at index {0}")]
    ZeroTarget(usize),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
