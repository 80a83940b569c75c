use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating point element type for feature maps and statistics: f32 or f64.
///
/// Reductions are carried out in f64 and rounded back to `Self` on output.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumCast + Default + Debug + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossless(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }
}
