//! Extended-precision scalar backed by `astro-float`.
//!
//! [`Wide`] wraps `astro_float::BigFloat`, whose operations are correctly
//! rounded at an explicit bit precision. The active precision is a
//! thread-local setting (default 192 bits) so parallel runs cannot interfere;
//! the backend rounds requested precision up to 64-bit words.

use std::cell::{Cell, RefCell};
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use astro_float::{BigFloat, Consts, Radix, RoundingMode, Sign, WORD_BIT_SIZE};
use num_traits::{One, Zero};

use crate::scalar::Real;

const RM: RoundingMode = RoundingMode::ToEven;

/// Default mantissa precision in bits.
pub const DEFAULT_PRECISION: usize = 192;

thread_local! {
    static PRECISION: Cell<usize> = const { Cell::new(DEFAULT_PRECISION) };
    static CONSTS: RefCell<Consts> = RefCell::new(Consts::new().expect("constants cache"));
}

/// Sets the mantissa precision (bits) for all subsequent [`Wide`] operations
/// on the calling thread. Values round up to the backend's word size.
pub fn set_precision(bits: usize) {
    assert!(bits >= 53, "extended precision must be at least 53 bits");
    PRECISION.with(|p| p.set(bits));
}

/// Effective mantissa bits after word-size rounding.
pub fn precision() -> usize {
    PRECISION.with(|p| p.get()).div_ceil(WORD_BIT_SIZE) * WORD_BIT_SIZE
}

fn prec() -> usize {
    precision()
}

fn with_consts<R>(f: impl FnOnce(&mut Consts) -> R) -> R {
    CONSTS.with(|c| f(&mut c.borrow_mut()))
}

/// Arbitrary-precision real number at the thread's active precision.
#[derive(Clone)]
pub struct Wide(BigFloat);

impl Wide {
    pub fn from_bigfloat(x: BigFloat) -> Self {
        Wide(x)
    }

    pub fn as_bigfloat(&self) -> &BigFloat {
        &self.0
    }
}

macro_rules! arith {
    ($trait:ident, $method:ident) => {
        impl $trait for Wide {
            type Output = Wide;
            fn $method(self, rhs: Wide) -> Wide {
                Wide(self.0.$method(&rhs.0, prec(), RM))
            }
        }
        impl<'a> $trait<&'a Wide> for Wide {
            type Output = Wide;
            fn $method(self, rhs: &'a Wide) -> Wide {
                Wide(self.0.$method(&rhs.0, prec(), RM))
            }
        }
        impl<'a, 'b> $trait<&'a Wide> for &'b Wide {
            type Output = Wide;
            fn $method(self, rhs: &'a Wide) -> Wide {
                Wide(self.0.$method(&rhs.0, prec(), RM))
            }
        }
    };
}

arith!(Add, add);
arith!(Sub, sub);
arith!(Mul, mul);
arith!(Div, div);

impl Neg for Wide {
    type Output = Wide;
    fn neg(self) -> Wide {
        Wide(BigFloat::neg(&self.0))
    }
}

impl Neg for &Wide {
    type Output = Wide;
    fn neg(self) -> Wide {
        Wide(BigFloat::neg(&self.0))
    }
}

impl PartialEq for Wide {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

impl PartialOrd for Wide {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

impl Zero for Wide {
    fn zero() -> Self {
        Wide(BigFloat::new(prec()))
    }

    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl One for Wide {
    fn one() -> Self {
        Wide(BigFloat::from_f64(1.0, prec()))
    }
}

impl From<f64> for Wide {
    fn from(x: f64) -> Self {
        Wide(BigFloat::from_f64(x, prec()))
    }
}

impl fmt::Display for Wide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

impl fmt::Debug for Wide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Wide({})", self.encode())
    }
}

impl Real for Wide {
    fn mantissa_bits() -> u32 {
        precision() as u32
    }

    fn to_f64(&self) -> f64 {
        if self.0.is_zero() {
            return 0.0;
        }
        if self.0.is_nan() {
            return f64::NAN;
        }
        if self.0.is_inf_pos() {
            return f64::INFINITY;
        }
        if self.0.is_inf_neg() {
            return f64::NEG_INFINITY;
        }
        let (words, _, sign, e, _) = self.0.as_raw_parts().expect("finite value");
        // Value is 0.m × 2^e with the mantissa's most significant word last;
        // the top two words carry more bits than f64 can hold.
        let mut mant = 0.0f64;
        let mut scale = 1.0f64;
        for w in words.iter().rev().take(2) {
            mant += (*w as f64) * scale;
            scale /= (1u128 << WORD_BIT_SIZE) as f64;
        }
        let e2 = e as i64 - WORD_BIT_SIZE as i64;
        // Apply the exponent in two halves; a single powi overflows inside
        // the f64 range even when the final product does not.
        let mut acc = if e2 < -1150 {
            0.0
        } else if e2 > 1100 {
            f64::INFINITY
        } else {
            let h = (e2 / 2) as i32;
            mant * 2f64.powi(h) * 2f64.powi(e2 as i32 - h)
        };
        if sign == Sign::Neg {
            acc = -acc;
        }
        acc
    }

    fn sqrt(&self) -> Self {
        Wide(self.0.sqrt(prec(), RM))
    }

    fn sin(&self) -> Self {
        with_consts(|cc| Wide(self.0.sin(prec(), RM, cc)))
    }

    fn cos(&self) -> Self {
        with_consts(|cc| Wide(self.0.cos(prec(), RM, cc)))
    }

    fn acos(&self) -> Self {
        with_consts(|cc| Wide(self.0.acos(prec(), RM, cc)))
    }

    fn atan2(&self, x: &Self) -> Self {
        let y = self;
        if x.0.is_zero() && y.0.is_zero() {
            return Wide::zero();
        }
        if x.0.is_zero() {
            let half_pi = Wide::pi() * Wide::from(0.5);
            return if y.0.is_positive() { half_pi } else { -half_pi };
        }
        let base = with_consts(|cc| Wide(self.0.div(&x.0, prec(), RM).atan(prec(), RM, cc)));
        if x.0.is_positive() {
            base
        } else if y.0.is_negative() {
            base - Wide::pi()
        } else {
            base + Wide::pi()
        }
    }

    fn exp(&self) -> Self {
        with_consts(|cc| Wide(self.0.exp(prec(), RM, cc)))
    }

    fn ln(&self) -> Self {
        with_consts(|cc| Wide(self.0.ln(prec(), RM, cc)))
    }

    fn abs(&self) -> Self {
        Wide(self.0.abs())
    }

    fn is_finite(&self) -> bool {
        !self.0.is_inf() && !self.0.is_nan()
    }

    fn maximum(&self, other: &Self) -> Self {
        Wide(self.0.max(&other.0))
    }

    fn minimum(&self, other: &Self) -> Self {
        Wide(self.0.min(&other.0))
    }

    fn pi() -> Self {
        with_consts(|cc| Wide(cc.pi(prec(), RM)))
    }

    fn encode(&self) -> String {
        with_consts(|cc| self.0.format(Radix::Dec, RM, cc)).unwrap_or_else(|_| "NaN".into())
    }

    fn decode(s: &str) -> Option<Self> {
        let v = with_consts(|cc| BigFloat::parse(s.trim(), Radix::Dec, prec(), RM, cc));
        if v.is_nan() && !s.trim().eq_ignore_ascii_case("nan") {
            return None;
        }
        Some(Wide(v))
    }
}
