//! Q16.16 fixed-point values shared by weights, thresholds and membrane potentials.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of fractional bits in the Q16.16 format.
pub const FRAC_BITS: u32 = 16;

/// Raw encoding of 1.0.
pub const ONE_RAW: i32 = 1 << FRAC_BITS;

/// A 32-bit signed Q16.16 quantity.
///
/// All arithmetic saturates at the 32-bit extremes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Potential(i32);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizeError {
    #[error("value {0} is outside the Q16.16 range (|w| < 32768)")]
    Overflow(f64),
    #[error("value is not finite")]
    NotFinite,
}

impl Potential {
    pub const ZERO: Potential = Potential(0);
    pub const ONE: Potential = Potential(ONE_RAW);
    pub const MAX: Potential = Potential(i32::MAX);
    pub const MIN: Potential = Potential(i32::MIN);

    #[inline]
    pub const fn from_raw(raw: i32) -> Self {
        Potential(raw)
    }

    #[inline]
    pub const fn raw(self) -> i32 {
        self.0
    }

    /// Whole-number potential, saturating outside the representable integer range.
    pub fn from_int(value: i32) -> Self {
        Potential((value as i64 * ONE_RAW as i64).clamp(i32::MIN as i64, i32::MAX as i64) as i32)
    }

    /// Round-to-nearest-even quantization of a real value.
    pub fn quantize(value: f64) -> Result<Self, QuantizeError> {
        if !value.is_finite() {
            return Err(QuantizeError::NotFinite);
        }
        if value.abs() >= 32768.0 {
            return Err(QuantizeError::Overflow(value));
        }
        // Scaling by a power of two is exact in f64, so the only rounding is this one.
        let scaled = (value * ONE_RAW as f64).round_ties_even();
        if scaled > i32::MAX as f64 || scaled < i32::MIN as f64 {
            return Err(QuantizeError::Overflow(value));
        }
        Ok(Potential(scaled as i32))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / ONE_RAW as f64
    }

    #[inline]
    pub fn saturating_add(self, rhs: Potential) -> Potential {
        Potential(self.0.saturating_add(rhs.0))
    }

    #[inline]
    pub fn saturating_sub(self, rhs: Potential) -> Potential {
        Potential(self.0.saturating_sub(rhs.0))
    }

    /// Arithmetic (sign-preserving) right shift.
    #[inline]
    pub fn shr(self, bits: u32) -> Potential {
        Potential(self.0 >> bits)
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn to_le_bytes(self) -> [u8; 4] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 4]) -> Self {
        Potential(i32::from_le_bytes(bytes))
    }
}

impl fmt::Display for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

/// Multiplicative decay factor in Q16.16, strictly between 0 and 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct DecayFactor(i32);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("decay factor raw value {0} is not in (0, 1.0)")]
pub struct DecayFactorError(pub i32);

impl DecayFactor {
    pub fn from_raw(raw: i32) -> Result<Self, DecayFactorError> {
        if raw > 0 && raw < ONE_RAW {
            Ok(DecayFactor(raw))
        } else {
            Err(DecayFactorError(raw))
        }
    }

    pub fn raw(self) -> i32 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / ONE_RAW as f64
    }
}

impl TryFrom<i32> for DecayFactor {
    type Error = DecayFactorError;
    fn try_from(raw: i32) -> Result<Self, Self::Error> {
        DecayFactor::from_raw(raw)
    }
}

impl From<DecayFactor> for i32 {
    fn from(d: DecayFactor) -> i32 {
        d.0
    }
}

/// Fixed-point multiply used by the bus-based fabric's decay unit.
///
/// The 64-bit product is truncated by dropping its 16 low bits, so a factor of
/// 2^-k gives exactly the same result as an arithmetic shift by k.
pub fn decay_mult(membrane: Potential, lambda: DecayFactor) -> Potential {
    let product = membrane.raw() as i64 * lambda.raw() as i64;
    Potential((product >> FRAC_BITS) as i32)
}
