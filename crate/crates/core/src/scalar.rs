use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type of every tensor in the crate: `f32` or `f64`.
///
/// Sums and dot products are carried out in `f64` regardless of `Self`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Widen to the accumulator type.
    #[inline]
    fn acc(self) -> f64 {
        // Every f32/f64 is representable as f64.
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Round an accumulator value back to `Self`.
    #[inline]
    fn from_acc(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    /// Narrowing used by the tensor files, which always store `f4`.
    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
