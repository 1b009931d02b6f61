//! Floating point abstraction used throughout the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar type the dynamics, solvers and controllers are generic over.
///
/// Implemented for `f32` and `f64`. All physical constants enter through
/// [`Scalar::c`], so a model written once works for both widths.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn c(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable")
    }

    /// Converts a count (step index, dimension) into this scalar type.
    #[inline]
    fn from_count(value: usize) -> Self {
        Self::from_usize(value).expect("count representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Newton residual tolerance that is attainable at this precision.
    fn default_abs_tol() -> Self {
        Self::c(1e-10).max(Self::epsilon() * Self::c(1e3))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
