//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// A real scalar usable for features, parameters, probabilities and objectives.
///
/// Implemented for `f32` and `f64`. Wire formats that fix a width (predictor
/// parameters, the binary dataset cache) convert through `f32`; prediction
/// columns are stored at the native width so they round-trip bit-exactly.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Byte width used when the value is serialized natively.
    const WIDTH: u8;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const WIDTH: u8 = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const WIDTH: u8 = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax written into `out`.
pub fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut total = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// Rounds to 6 significant digits, the precision used in every report file.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_tie() {
        assert_eq!(argmax(&[0.5f64, 0.5]), 0);
        assert_eq!(argmax(&[0.1f32, 0.7, 0.7]), 1);
    }

    #[test]
    fn rounding_keeps_six_significant_digits() {
        assert_eq!(round_sig(0.043826932), 0.0438269);
        assert_eq!(round_sig(6340.0), 6340.0);
        assert_eq!(round_sig(1234567.0), 1234570.0);
        assert_eq!(round_sig(0.0), 0.0);
    }

    #[test]
    fn softmax_is_normalized_for_extreme_logits() {
        let mut out = [0.0f32; 3];
        softmax_into(&[1000.0f32, -1000.0, 0.0], &mut out);
        let total: f32 = out.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(out[0] > 0.999);
    }
}
