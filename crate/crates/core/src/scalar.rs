//! Floating point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the scoring, decoding and training code is generic over.
///
/// Implemented for `f32` and `f64`. Numeric methods (`exp`, `ln`, `sqrt`, ...)
/// come from nalgebra's `ComplexField`, so SVD and the rest of the math share
/// one set of bounds.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Sum + Debug + Display + LowerExp
{
    /// Number of bytes of the little-endian encoding.
    const BYTES: usize;
    /// Tag written into file headers.
    const KIND: &'static str;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;

    /// Log-space stand-in for minus infinity.
    fn neg_inf() -> Self {
        Self::of(crate::NEG_INF)
    }

    /// True for log-space values that denote an impossible event.
    fn is_impossible(self) -> bool {
        self.as_f64() <= crate::IMPOSSIBLE_THRESHOLD
    }
}

impl Scalar for f32 {
    const BYTES: usize = 4;
    const KIND: &'static str = "f32";

    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;
    const KIND: &'static str = "f64";

    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Numerically stable `ln(sum(exp(x)))`. Returns the sentinel for an all-impossible input.
pub fn log_sum_exp<T: Scalar>(values: impl IntoIterator<Item = T> + Clone) -> T {
    let max = values
        .clone()
        .into_iter()
        .fold(T::neg_inf(), |acc, v| if v > acc { v } else { acc });
    if max.is_impossible() {
        return T::neg_inf();
    }
    let sum: T = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
