//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the manifold, measure and bound code: `f32` or `f64`.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Machine epsilon of the underlying type.
    const EPS: Self;
    /// Positive infinity.
    const INF: Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const EPS: Self = f32::EPSILON;
    const INF: Self = f32::INFINITY;
}

impl Scalar for f64 {
    const EPS: Self = f64::EPSILON;
    const INF: Self = f64::INFINITY;
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

#[inline]
pub fn from_usize<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("count representable in scalar type")
}

#[inline]
pub fn is_finite<T: Scalar>(x: T) -> bool {
    x.to_f64_lossy().is_finite()
}
