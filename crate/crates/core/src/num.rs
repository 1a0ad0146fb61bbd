//! Scalar abstraction: all numerics are generic over a floating-point type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used throughout the crate: `f32` or `f64`.
///
/// `f64` is the recommended type for estimation and simulation; the
/// crate-root aliases are instantiated with it.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Cast an `f64` constant into the working scalar type.
#[inline]
pub fn cast<F: Scalar>(x: f64) -> F {
    F::from(x).expect("constant representable in scalar type")
}

/// Cast a `usize` count into the working scalar type.
#[inline]
pub fn cast_usize<F: Scalar>(x: usize) -> F {
    F::from(x).expect("count representable in scalar type")
}
