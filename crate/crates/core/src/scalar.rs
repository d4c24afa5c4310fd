use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type for matrices and models: `f32` or `f64`.
///
/// Reductions (means, covariances, distance sums) are carried out in `f64`
/// regardless of the element type, so the conversions below are on the hot
/// path and must be cheap.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self;

    fn to_f64_lossless(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }
}

/// Dot product accumulated in `f64`.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x.to_f64_lossless() * y.to_f64_lossless())
        .sum()
}

#[inline]
pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.to_f64_lossless() - y.to_f64_lossless();
            d * d
        })
        .sum()
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity of two vectors; `None` when either has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}
