//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for dataset, model, loss, schedule and trainer code.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed binary input (bad magic number, bad dimension header, ...).
    #[error("format error: {0}")]
    Format(String),

    /// Structurally inconsistent inputs (image/label count mismatch, ...).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Bad configuration value (unknown transform, incompatible shape, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid argument to an operation.
    #[error("argument error: {0}")]
    Argument(String),

    /// Non-finite or otherwise numerically invalid input.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Tensor shape mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid schedule parameter (nonpositive beta, f outside (0,1], ...).
    #[error("schedule error: {0}")]
    Schedule(String),

    /// Training-path access to labels that are absent or evaluation-only.
    #[error("label leakage: {0}")]
    LabelLeakage(String),

    /// Training aborted on non-finite or exploding loss.
    #[error("diverged at step {step} (teacher {teacher}, {kind}): loss {value}")]
    Diverged {
        step: u64,
        teacher: usize,
        kind: String,
        value: f64,
    },

    /// Checkpoint or container cannot be read by this version.
    #[error("incompatible file: {0}")]
    Incompatible(String),

    /// Requested value is mathematically undefined (zero-norm centroid, ...).
    #[error("undefined value: {0}")]
    Undefined(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
