//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::LowerExp;

/// Real floating-point type the models are computed in.
///
/// Implemented for `f32` and `f64`. Everything numerically delicate
/// (MCMC, oracle comparisons) is exercised in `f64`; `f32` is supported
/// for memory-bound kernel and covariance work.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + LowerExp {
    /// Relative jitter multiplier applied to kernel diagonals before factorization.
    const JITTER: f64 = 1e-9;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    fn neg_infinity() -> Self {
        Self::lit(f64::NEG_INFINITY)
    }

    fn infinity() -> Self {
        Self::lit(f64::INFINITY)
    }

    fn finite(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for `T::lit`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::lit(x)
}
