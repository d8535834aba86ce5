//! Floating-point abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the tracker is generic over (`f32` or `f64`).
///
/// Matrix storage goes through `nalgebra`, which only needs the
/// `nalgebra::Scalar` marker plus closed arithmetic; everything transcendental
/// comes from [`num_traits::Float`].
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + nalgebra::Scalar
    + Default
    + Display
    + Debug
    + Sum
    + Send
    + Sync
{
    /// Converts an `f64` literal. Panics only if the value is unrepresentable,
    /// which never happens for the finite constants used in this crate.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Smallest log value used in place of `ln(0)` so costs stay finite.
    #[inline]
    fn log_floor() -> Self {
        Self::min_positive_value().ln()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `ln(Σ exp(xᵢ))`, stable for large negative inputs. Empty input gives `-∞`.
pub fn log_sum_exp<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let v: Vec<T> = values.into_iter().collect();
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    if max == T::infinity() {
        return max;
    }
    let sum: T = v.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `ln(exp(a) + exp(b))`.
pub fn log_add<T: Scalar>(a: T, b: T) -> T {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == T::neg_infinity() {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}
