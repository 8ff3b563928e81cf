//! Precision-generic real scalar.
//!
//! Everything in this crate is parameterized over [`Real`] so the same code
//! runs at 53-bit (`f64`) and extended (`Wide`) mantissa precision. Switching
//! precision changes tolerances, never semantics.

use std::fmt::{Debug, Display};
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{One, Zero};

/// Scalar operations required by the filters.
///
/// Implementations must provide +, −, ×, ÷, sqrt, sin, cos, atan2, exp, log
/// with relative error ≤ 4 ulp at the reported precision, and `From<f64>`
/// must lift the 53-bit value exactly.
pub trait Real:
    Clone
    + Debug
    + Display
    + PartialEq
    + PartialOrd
    + Zero
    + One
    + Neg<Output = Self>
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + for<'a> Add<&'a Self, Output = Self>
    + for<'a> Sub<&'a Self, Output = Self>
    + for<'a> Mul<&'a Self, Output = Self>
    + for<'a> Div<&'a Self, Output = Self>
    + From<f64>
    + 'static
{
    /// Mantissa bit count of the active precision.
    fn mantissa_bits() -> u32;

    /// Nearest `f64`, for reporting and plotting.
    fn to_f64(&self) -> f64;

    fn sqrt(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn acos(&self) -> Self;
    /// Four-quadrant arctangent of `self / x`.
    fn atan2(&self, x: &Self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn abs(&self) -> Self;
    fn is_finite(&self) -> bool;
    fn maximum(&self, other: &Self) -> Self;
    fn minimum(&self, other: &Self) -> Self;
    fn pi() -> Self;

    /// String form that reloads exactly via [`Real::decode`] at the same
    /// precision.
    fn encode(&self) -> String;

    /// Parses a decimal string at the active precision.
    fn decode(s: &str) -> Option<Self>;

    /// Exact power of two, `2^e`.
    fn exp2i(e: i32) -> Self {
        let mut result = Self::one();
        let mut base = Self::from(if e < 0 { 0.5 } else { 2.0 });
        let mut n = e.unsigned_abs();
        while n > 0 {
            if n & 1 == 1 {
                result = result * &base;
            }
            base = base.clone() * &base;
            n >>= 1;
        }
        result
    }

    /// Unit in the last place of 1.0: `2^(1−p)`.
    fn ulp() -> Self {
        Self::exp2i(1 - Self::mantissa_bits() as i32)
    }

    /// Threshold below which small-angle series replace sin/cos ratios:
    /// `2^(−p/2)`.
    fn taylor_threshold() -> Self {
        Self::exp2i(-(Self::mantissa_bits() as i32 / 2))
    }
}

impl Real for f64 {
    fn mantissa_bits() -> u32 {
        f64::MANTISSA_DIGITS
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn sqrt(&self) -> f64 {
        f64::sqrt(*self)
    }

    fn sin(&self) -> f64 {
        f64::sin(*self)
    }

    fn cos(&self) -> f64 {
        f64::cos(*self)
    }

    fn acos(&self) -> f64 {
        f64::acos(*self)
    }

    fn atan2(&self, x: &f64) -> f64 {
        f64::atan2(*self, *x)
    }

    fn exp(&self) -> f64 {
        f64::exp(*self)
    }

    fn ln(&self) -> f64 {
        f64::ln(*self)
    }

    fn abs(&self) -> f64 {
        f64::abs(*self)
    }

    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }

    fn maximum(&self, other: &f64) -> f64 {
        f64::max(*self, *other)
    }

    fn minimum(&self, other: &f64) -> f64 {
        f64::min(*self, *other)
    }

    fn pi() -> f64 {
        std::f64::consts::PI
    }

    fn encode(&self) -> String {
        // `Display` for f64 prints the shortest digits that reload exactly.
        format!("{self}")
    }

    fn decode(s: &str) -> Option<f64> {
        s.trim().parse().ok()
    }
}
