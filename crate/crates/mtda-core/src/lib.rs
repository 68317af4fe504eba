//! Multi-teacher multi-target domain adaptation.
//!
//! One compact student classifier learns several unlabeled target domains by
//! alternating, at batch level, over per-target teacher networks. Each
//! teacher performs adversarial (gradient-reversal) domain adaptation to its
//! own target; the student receives temperature-softened logits from each
//! teacher in turn. An exponential schedule moves weight from the teachers'
//! adaptation objective to the distillation objective across epochs.
//!
//! All numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! concrete aliases below pick the lane. `f64` is the deterministic oracle
//! lane used by the bit-exactness tests.

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default training scalar: fast single precision.
pub type FastScalar = f32;
/// Deterministic-mode scalar: double precision, used by the oracle suites.
pub type ExactScalar = f64;
