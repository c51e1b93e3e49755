//! Floating-point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Real scalar used by the dynamics, the networks and the DP solver.
///
/// Implemented for `f32` and `f64`. Everything that trains or reports runs
/// in `f64`; `f32` is kept for cheap inference and for checking that the
/// math is not accidentally tied to one width.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + 'static
{
    /// Lossy conversion from an `f64` literal or configuration value.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar always converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `min(max(v, lo), hi)` without the NaN-propagation surprises of `clamp`.
pub fn clamp<T: Scalar>(v: T, lo: T, hi: T) -> T {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}
