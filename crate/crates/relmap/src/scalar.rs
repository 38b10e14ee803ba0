use num_traits::{Float, NumCast};
use std::fmt::Debug;

/// Scalar element type for the numeric kernels.
///
/// Accumulations inside reductions, matrix products, and convolutions run in
/// `f64` regardless of the element type, then round back to `S`. This keeps
/// conservation-style checks stable for `f32` tensors while leaving `f64`
/// tensors exact.
pub trait Scalar: Float + NumCast + Copy + Debug + Default + Send + Sync + 'static {
    #[inline]
    fn to_f64(self) -> f64 {
        <f64 as NumCast>::from(self).unwrap()
    }

    #[inline]
    fn from_f64(v: f64) -> Self {
        <Self as NumCast>::from(v).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
