//! Floating point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftNum;

/// Real scalar the models, metrics and DSP code are generic over.
///
/// Implemented for `f32` and `f64`. Embeddings read from disk are always
/// `f64`; `f32` is available for callers that want smaller models.
pub trait Scalar:
    Float + FftNum + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn lit(x: f64) -> Self;

    /// Widens to `f64` for reporting and statistics tables.
    fn to_f64_lossless(self) -> f64;

    /// Draws one sample from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn to_f64_lossless(self) -> f64 {
                self as f64
            }

            #[inline]
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                <StandardNormal as Distribution<$t>>::sample(&StandardNormal, rng)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Sum of a slice, accumulated left to right.
pub(crate) fn sum<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().fold(T::zero(), |a, b| a + b)
}

pub(crate) fn mean<T: Scalar>(xs: &[T]) -> T {
    sum(xs) / T::lit(xs.len() as f64)
}

/// Sample variance with the `n - 1` denominator. Requires `n >= 2`.
pub(crate) fn sample_variance<T: Scalar>(xs: &[T]) -> T {
    let m = mean(xs);
    let ss = xs.iter().map(|&x| (x - m) * (x - m)).fold(T::zero(), |a, b| a + b);
    ss / T::lit((xs.len() - 1) as f64)
}
