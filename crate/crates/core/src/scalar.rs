//! Floating point scalar abstraction.
//!
//! The dense linear algebra, feature maps and attention paths are written
//! against [`Scalar`] so they run in `f32` (benchmarks) or `f64` (all
//! statistical checks). Estimators, optimal sampling and covariance learning
//! are `f64`-only.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// floating point: f32 or f64
pub trait Scalar:
    Float + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or draw.
    fn of(x: f64) -> Self;

    /// Widening conversion used by diagnostics.
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dot product with a fixed left-to-right summation order.
///
/// Every feature map and estimator routes through this so that algebraically
/// equal reductions (e.g. a data-aware map with `M = I`) agree bitwise.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + *x * *y;
    }
    acc
}

/// Squared Euclidean norm, same summation order as [`dot`].
#[inline]
pub fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}
