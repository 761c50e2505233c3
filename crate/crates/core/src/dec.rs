//! Exact 18-decimal fixed-point numbers.
//!
//! A [`Dec`] is an `i128` mantissa scaled by 10^18. Addition and subtraction
//! are exact; multiplication and division rescale by 10^18 and truncate toward
//! zero, which is the convention EVM lending contracts use. Intermediate
//! products are widened to 256 bits so only the final result has to fit.

use std::fmt;
use std::str::FromStr;

use ethnum::I256;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of fractional digits carried by every [`Dec`].
pub const DECIMALS: u32 = 18;

const SCALE: i128 = 1_000_000_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ArithmeticError {
    #[error("arithmetic overflow")]
    Overflow,
    #[error("division by zero")]
    DivisionByZero,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid decimal {input:?}: {reason}")]
pub struct ParseDecError {
    pub input: String,
    pub reason: &'static str,
}

/// Signed fixed-point decimal with 18 fractional digits.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dec(i128);

impl Dec {
    pub const ZERO: Dec = Dec(0);
    pub const ONE: Dec = Dec(SCALE);
    /// Smallest positive value, one mantissa unit.
    pub const EPSILON: Dec = Dec(1);
    pub const MAX: Dec = Dec(i128::MAX);

    pub const fn from_mantissa(mantissa: i128) -> Self {
        Dec(mantissa)
    }

    pub const fn mantissa(self) -> i128 {
        self.0
    }

    /// Whole-number value. Panics if `n * 10^18` does not fit, which needs
    /// `|n| > 1.7e20`.
    pub const fn from_int(n: i64) -> Self {
        Dec(n as i128 * SCALE)
    }

    /// Converts an integer amount in an asset's native units (`decimals`
    /// fractional digits, as ERC-20 balances are stored) to whole units.
    pub fn from_native(amount: i128, decimals: u8) -> Result<Self, ArithmeticError> {
        if decimals as u32 > DECIMALS {
            return Err(ArithmeticError::Overflow);
        }
        let factor = 10i128.pow(DECIMALS - decimals as u32);
        amount.checked_mul(factor).map(Dec).ok_or(ArithmeticError::Overflow)
    }

    /// `numerator / denominator` truncated toward zero.
    pub fn ratio(numerator: i64, denominator: i64) -> Result<Self, ArithmeticError> {
        Dec::from_int(numerator).checked_div(Dec::from_int(denominator))
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub const fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub const fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn abs(self) -> Self {
        Dec(self.0.abs())
    }

    pub fn checked_add(self, rhs: Dec) -> Result<Dec, ArithmeticError> {
        self.0.checked_add(rhs.0).map(Dec).ok_or(ArithmeticError::Overflow)
    }

    pub fn checked_sub(self, rhs: Dec) -> Result<Dec, ArithmeticError> {
        self.0.checked_sub(rhs.0).map(Dec).ok_or(ArithmeticError::Overflow)
    }

    /// `trunc(a * b / 10^18)` over mantissas.
    pub fn checked_mul(self, rhs: Dec) -> Result<Dec, ArithmeticError> {
        match self.0.checked_mul(rhs.0) {
            Some(p) => Ok(Dec(p / SCALE)),
            None => mul_div_scale(self.0, rhs.0),
        }
    }

    /// `trunc(a * 10^18 / b)` over mantissas.
    pub fn checked_div(self, rhs: Dec) -> Result<Dec, ArithmeticError> {
        if rhs.0 == 0 {
            return Err(ArithmeticError::DivisionByZero);
        }
        match self.0.checked_mul(SCALE) {
            Some(n) => Ok(Dec(n / rhs.0)),
            None => narrow(I256::from(self.0) * I256::from(SCALE) / I256::from(rhs.0)),
        }
    }

    /// `self * mul / div` with a single truncation at the end.
    ///
    /// Returns `self` unchanged when `mul == div`, so scaling by an unchanged
    /// index is an exact identity.
    pub fn checked_mul_div(self, mul: Dec, div: Dec) -> Result<Dec, ArithmeticError> {
        if div.0 == 0 {
            return Err(ArithmeticError::DivisionByZero);
        }
        match self.0.checked_mul(mul.0) {
            Some(p) => Ok(Dec(p / div.0)),
            None => narrow(I256::from(self.0) * I256::from(mul.0) / I256::from(div.0)),
        }
    }

    /// `self / (a * b)` with a single truncation at the end.
    pub fn checked_div_product(self, a: Dec, b: Dec) -> Result<Dec, ArithmeticError> {
        if a.0 == 0 || b.0 == 0 {
            return Err(ArithmeticError::DivisionByZero);
        }
        let scale = I256::from(SCALE);
        narrow(I256::from(self.0) * scale * scale / (I256::from(a.0) * I256::from(b.0)))
    }

    /// Sum of an iterator, failing on overflow.
    pub fn checked_sum<I: IntoIterator<Item = Dec>>(iter: I) -> Result<Dec, ArithmeticError> {
        iter.into_iter().try_fold(Dec::ZERO, Dec::checked_add)
    }

    /// Lossy conversion for display and plotting only.
    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    /// Formats with at least `min_frac` fractional digits, padding with zeros.
    pub fn to_string_min_frac(self, min_frac: usize) -> String {
        let s = self.to_string();
        let frac_len = s.split_once('.').map_or(0, |(_, f)| f.len());
        if frac_len >= min_frac {
            return s;
        }
        let mut out = s;
        if frac_len == 0 {
            out.push('.');
        }
        out.extend(std::iter::repeat_n('0', min_frac - frac_len));
        out
    }
}

/// `trunc(a * b / SCALE)` through a 256-bit product held in 64-bit limbs.
fn mul_div_scale(a: i128, b: i128) -> Result<Dec, ArithmeticError> {
    const MASK: u128 = u64::MAX as u128;
    let (x, y) = (a.unsigned_abs(), b.unsigned_abs());
    let (x0, x1, y0, y1) = (x & MASK, x >> 64, y & MASK, y >> 64);
    let ll = x0 * y0;
    let lh = x0 * y1;
    let hl = x1 * y0;
    let hh = x1 * y1;
    let mid = (ll >> 64) + (lh & MASK) + (hl & MASK);
    let lo = (ll & MASK) | (mid << 64);
    let hi = hh + (lh >> 64) + (hl >> 64) + (mid >> 64);
    let limbs = [hi >> 64, hi & MASK, lo >> 64, lo & MASK];
    let divisor = SCALE as u128;
    let mut rem = 0u128;
    let mut q = [0u128; 4];
    for (i, limb) in limbs.iter().enumerate() {
        let cur = (rem << 64) | limb;
        q[i] = cur / divisor;
        rem = cur % divisor;
    }
    if q[0] != 0 || q[1] != 0 {
        return Err(ArithmeticError::Overflow);
    }
    let magnitude = (q[2] << 64) | q[3];
    let negative = (a < 0) != (b < 0);
    if negative {
        if magnitude > i128::MAX as u128 + 1 {
            return Err(ArithmeticError::Overflow);
        }
        Ok(Dec((magnitude as i128).wrapping_neg()))
    } else {
        i128::try_from(magnitude).map(Dec).map_err(|_| ArithmeticError::Overflow)
    }
}

fn narrow(wide: I256) -> Result<Dec, ArithmeticError> {
    i128::try_from(wide).map(Dec).map_err(|_| ArithmeticError::Overflow)
}

impl fmt::Display for Dec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let neg = self.0 < 0;
        let m = self.0.unsigned_abs();
        let int = m / SCALE as u128;
        let frac = m % SCALE as u128;
        if neg {
            f.write_str("-")?;
        }
        write!(f, "{int}")?;
        if frac != 0 {
            let digits = format!("{frac:018}");
            write!(f, ".{}", digits.trim_end_matches('0'))?;
        }
        Ok(())
    }
}

impl fmt::Debug for Dec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dec({self})")
    }
}

impl FromStr for Dec {
    type Err = ParseDecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| ParseDecError { input: s.to_string(), reason };
        let (neg, body) = match s.as_bytes().first() {
            Some(b'-') => (true, &s[1..]),
            Some(b'+') => (false, &s[1..]),
            Some(_) => (false, s),
            None => return Err(err("empty string")),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (body, None),
        };
        if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err("expected digits before the decimal point"));
        }
        let mut frac_value: i128 = 0;
        if let Some(frac) = frac_part {
            if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err("expected digits after the decimal point"));
            }
            if frac.len() > DECIMALS as usize {
                return Err(err("more than 18 fractional digits"));
            }
            let padded = format!("{frac:0<18}");
            frac_value = padded.parse().map_err(|_| err("bad fractional part"))?;
        }
        let int_value: i128 = int_part.parse().map_err(|_| err("integer part out of range"))?;
        let mantissa = int_value
            .checked_mul(SCALE)
            .and_then(|v| v.checked_add(frac_value))
            .ok_or_else(|| err("value out of range"))?;
        Ok(Dec(if neg { -mantissa } else { mantissa }))
    }
}

impl Serialize for Dec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Dec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
