//! Floating-point scalar abstraction for the numeric kernels.
//!
//! Geometry and statistics code is generic over [`Scalar`] so the same
//! formulas run in `f32` or `f64`. The pipeline itself uses `f64`
//! (see the type aliases at the crate root).

use std::fmt::Debug;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar: Float + FromPrimitive + AddAssign + Debug + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` constant into the working scalar type.
#[inline]
pub(crate) fn cast<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("finite f64 converts to any Scalar")
}
