//! Elastic tensor-selection training at desk scale.
//!
//! A small laboratory for speeding up training by selecting, at runtime, the
//! subset of trainable tensors that maximizes estimated loss reduction under
//! a wall-clock iteration-time budget. The pieces:
//!
//! - [`engine`]: reverse-mode training engine with per-tensor freezing and
//!   per-operation work counts
//! - [`clock`]: deterministic synthetic clock (and a wall clock) pricing
//!   those work counts in integer nanoseconds
//! - [`profiler`]: tensor-level backward-time model `(t_dw, t_dy)` and exact
//!   iteration-time prediction for any selection mask
//! - [`importance`]: first-order estimate of each tensor's loss-reduction
//!   contribution, with an exact undo oracle
//! - [`selector`]: dynamic-programming solver for the budgeted selection
//!   problem, validated by exhaustive enumeration, plus baseline strategies
//! - [`harness`]: end-to-end runs, datasets, config files, structured logs
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the harness and all published tolerances use `f64`.

pub mod clock;
pub mod engine;
pub mod error;
pub mod harness;
pub mod importance;
pub mod mask;
pub mod profiler;
pub mod rng;
pub mod scalar;
pub mod selector;

pub use error::{Error, Result};
pub use mask::SelectionMask;
pub use scalar::Scalar;

/// Concrete aliases for the precision used by the harness and the tests.
pub type Network64 = engine::Network<f64>;
pub type Batch64 = engine::Batch<f64>;
pub type GradientSet64 = engine::GradientSet<f64>;
pub type UpdateSet64 = engine::UpdateSet<f64>;
pub type ImportanceVector64 = importance::ImportanceVector<f64>;

/// Single-precision aliases for experiments where f64 is overkill.
pub type Network32 = engine::Network<f32>;
pub type Batch32 = engine::Batch<f32>;
