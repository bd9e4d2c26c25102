//! Scalar abstractions.
//!
//! The stabilized quenched arithmetic needs `ln`/`exp`, so it is written
//! against [`Real`] (implemented for `f32` and `f64`). The raw, unstabilized
//! composition and the power-series oracle only need field operations and are
//! written against [`Field`], which exact rationals also satisfy.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, Num, NumCast};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + NumCast + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant is representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Any commutative field-like scalar with an order (floats, exact rationals).
pub trait Field: Clone + Num + PartialOrd + Debug {}

impl<T: Clone + Num + PartialOrd + Debug> Field for T {}

/// Sum of a slice.
pub fn sum<T: Field>(x: &[T]) -> T {
    x.iter().cloned().fold(T::zero(), |a, b| a + b)
}

/// Euclidean inner product `(x, y)`.
pub fn dot<T: Field>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .fold(T::zero(), |a, (p, q)| a + p.clone() * q.clone())
}
