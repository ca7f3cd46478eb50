//! Probability arithmetic abstraction.
//!
//! All language computations are generic over [`Prob`] so the same evaluator
//! runs in fast double precision (the default everywhere) and in exact
//! rational arithmetic (used by oracle tests and anywhere drift-free sums
//! matter).

use std::fmt;
use std::ops::{Add, Div, Mul, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Normalization tolerance for float probability vectors and language masses.
pub const EPS_NORM: f64 = 1e-9;

/// A probability value. Implemented for `f64` and [`BigRational`].
pub trait Prob:
    Clone
    + PartialEq
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Sized
{
    /// True when arithmetic is exact (no tolerance needed in comparisons).
    const EXACT: bool;

    fn zero() -> Self;
    fn one() -> Self;

    /// Exact fraction `num/den`.
    fn ratio(num: u64, den: u64) -> Self;

    /// Exact conversion from a float (binary expansion for rationals).
    fn from_f64(x: f64) -> Self;

    fn to_f64(&self) -> f64;

    fn powi(&self, n: u32) -> Self;

    fn is_zero(&self) -> bool {
        *self == Self::zero()
    }

    /// Whether a sum of probabilities counts as 1 under this arithmetic.
    fn sum_is_one(total: &Self) -> bool;
}

impl Prob for f64 {
    const EXACT: bool = false;

    fn zero() -> Self {
        0.0
    }

    fn one() -> Self {
        1.0
    }

    fn ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }

    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    // sequential products: bit-reproducible across constant folding,
    // unlike f64::powi
    fn powi(&self, n: u32) -> Self {
        let mut acc = 1.0;
        for _ in 0..n {
            acc *= self;
        }
        acc
    }

    fn sum_is_one(total: &Self) -> bool {
        (total - 1.0).abs() <= EPS_NORM
    }
}

impl Prob for BigRational {
    const EXACT: bool = true;

    fn zero() -> Self {
        <BigRational as Zero>::zero()
    }

    fn one() -> Self {
        <BigRational as One>::one()
    }

    fn ratio(num: u64, den: u64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite float")
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn powi(&self, n: u32) -> Self {
        let mut acc = <Self as Prob>::one();
        for _ in 0..n {
            acc *= self.clone();
        }
        acc
    }

    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }

    fn sum_is_one(total: &Self) -> bool {
        Signed::abs(&(total.clone() - <Self as Prob>::one())) == <Self as Prob>::zero()
    }
}
