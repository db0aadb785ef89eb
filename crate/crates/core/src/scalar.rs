//! Scalar abstraction shared by the numeric modules.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the geometry, calibration, filtering and
/// shape code. Implemented for `f32` and `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {}

impl<T> Real for T where T: RealField + Copy + FromPrimitive + ToPrimitive {}

/// Converts an `f64` constant into `T`.
#[inline]
pub fn lit<T: Real>(v: f64) -> T {
    nalgebra::convert(v)
}

/// Lossy conversion back to `f64` for reporting and serialization.
#[inline]
pub fn to_f64<T: Real>(v: T) -> f64 {
    ToPrimitive::to_f64(&v).unwrap_or(f64::NAN)
}

#[inline]
pub(crate) fn from_usize<T: Real>(v: usize) -> T {
    lit(v as f64)
}

/// Degrees (f64) to radians in `T`.
pub fn radians<T: Real>(deg: f64) -> T {
    lit(deg.to_radians())
}
