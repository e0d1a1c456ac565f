//! Scalar abstraction for the numerical core.
//!
//! Everything below the experiment harness is generic over [`Scalar`] so the
//! same code runs in `f32` or `f64`. The harness and CLI pin `f64` through the
//! aliases at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar usable throughout the numerical core.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// One standard-normal draw in this precision.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for f64 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

/// Convert an `f64` literal into `T`. Panics only if `T` cannot represent
/// finite doubles, which no supported scalar triggers.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal must convert into scalar type")
}

/// `usize` count as a scalar.
#[inline]
pub fn count<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("usize must convert into scalar type")
}
