//! Scalar abstraction shared by the numerical core.
//!
//! Every estimator is written against [`Scalar`] so the same code runs in
//! `f64` (the default everywhere in the crate) or `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Largest acceptable condition number for a normal-equation system.
    fn max_condition() -> Self;
}

impl Scalar for f64 {
    fn max_condition() -> Self {
        1e12
    }
}

impl Scalar for f32 {
    // 1e12 is far beyond what single precision can resolve.
    fn max_condition() -> Self {
        1e6
    }
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

#[inline]
pub fn from_usize<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("count representable in scalar type")
}

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    xs.iter().copied().sum::<T>() / from_usize(xs.len())
}

/// Population variance (divides by `n`).
pub fn population_variance<T: Scalar>(xs: &[T]) -> T {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / from_usize(xs.len())
}

/// Sample variance (divides by `n - 1`).
pub fn sample_variance<T: Scalar>(xs: &[T]) -> T {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / from_usize(xs.len() - 1)
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
