//! Floating-point scalar abstraction for the training engine.
//!
//! All numeric kernels are written against [`Scalar`] so the engine can be
//! instantiated with `f32` or `f64`. The harness and the acceptance suite use
//! `f64` throughout; `f32` exists for experiments where precision is not the
//! bottleneck.

use num_traits::{Float, FromPrimitive, NumAssignOps, NumCast};

/// Floating-point element type of network parameters and activations.
pub trait Scalar:
    Float + FromPrimitive + NumCast + NumAssignOps + Default + std::fmt::Debug + Send + Sync + 'static
{
    /// Lossless-enough conversion from an `f64` literal or RNG draw.
    fn from_f64_lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to Scalar")
    }

    /// Widening conversion used for logging and cross-type comparisons.
    fn to_f64_lossy(self) -> f64 {
        NumCast::from(self).expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
