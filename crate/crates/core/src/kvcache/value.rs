use crate::error::{QjlError, Result};

/// One value token quantized with its own zero point and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedValueToken {
    codes: Vec<u8>,
    zero: f64,
    scale: f64,
    bits: u8,
}

impl QuantizedValueToken {
    /// Reassembles a token, checking that every code fits in `bits`.
    pub fn from_parts(codes: Vec<u8>, zero: f64, scale: f64, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        if !(scale >= 0.0) || !scale.is_finite() || !zero.is_finite() {
            return Err(QjlError::InvalidArgument(format!(
                "zero {zero} / scale {scale} must be finite with scale >= 0"
            )));
        }
        let max = max_code(bits);
        if let Some(c) = codes.iter().find(|&&c| c > max) {
            return Err(QjlError::InvalidArgument(format!(
                "code {c} exceeds {bits}-bit range"
            )));
        }
        Ok(Self {
            codes,
            zero,
            scale,
            bits,
        })
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn zero(&self) -> f64 {
        self.zero
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn dim(&self) -> usize {
        self.codes.len()
    }

    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        self.zero + self.codes[i] as f64 * self.scale
    }

    pub fn dequantize(&self) -> Vec<f64> {
        (0..self.codes.len()).map(|i| self.value(i)).collect()
    }

    /// `out += weight * dequantize()`
    #[inline]
    pub(crate) fn accumulate_into(&self, weight: f64, out: &mut [f64]) {
        for (o, &c) in out.iter_mut().zip(&self.codes) {
            *o += weight * (self.zero + c as f64 * self.scale);
        }
    }
}

fn check_bits(bits: u8) -> Result<()> {
    if (1..=8).contains(&bits) {
        Ok(())
    } else {
        Err(QjlError::InvalidArgument(format!(
            "value bit width must be in 1..=8, got {bits}"
        )))
    }
}

fn max_code(bits: u8) -> u8 {
    ((1u16 << bits) - 1) as u8
}

/// Token-wise asymmetric quantization: `zero = min(v)`,
/// `scale = (max(v) - min(v)) / (2^bits - 1)`, codes rounded half-to-even.
pub fn quantize_value(v: &[f64], bits: u8) -> Result<QuantizedValueToken> {
    check_bits(bits)?;
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(QjlError::InvalidArgument(format!(
            "value token contains non-finite entry {x}"
        )));
    }
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if v.is_empty() || lo == hi {
        return Ok(QuantizedValueToken {
            codes: vec![0; v.len()],
            zero: if v.is_empty() { 0.0 } else { lo },
            scale: 0.0,
            bits,
        });
    }
    let max = max_code(bits);
    let scale = (hi - lo) / max as f64;
    let codes = v
        .iter()
        .map(|&x| ((x - lo) / scale).round_ties_even().clamp(0.0, max as f64) as u8)
        .collect();
    Ok(QuantizedValueToken {
        codes,
        zero: lo,
        scale,
        bits,
    })
}

pub fn dequantize_value(token: &QuantizedValueToken) -> Vec<f64> {
    token.dequantize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        let t = quantize_value(&[1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(t.zero(), 1.0);
        assert!((t.scale() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.codes(), &[0, 2, 3]);
        let back = t.dequantize();
        assert_eq!(back[0], 1.0);
        assert!((back[1] - 7.0 / 3.0).abs() < 1e-12);
        assert!((back[2] - 3.0).abs() < 1e-12);
        let max_err = [1.0, 2.0, 3.0]
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!((max_err - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_token_is_exact() {
        for bits in 1..=8 {
            let t = quantize_value(&[5.0, 5.0, 5.0], bits).unwrap();
            assert_eq!(t.scale(), 0.0);
            assert_eq!(t.codes(), &[0, 0, 0]);
            assert_eq!(dequantize_value(&t), vec![5.0, 5.0, 5.0]);
        }
    }

    #[test]
    fn extremes_map_to_end_codes() {
        let t = quantize_value(&[-2.0, 0.5, 7.0], 8).unwrap();
        assert_eq!(t.codes()[0], 0);
        assert_eq!(t.codes()[2], 255);
    }

    #[test]
    fn invalid_bits_and_inputs() {
        assert!(quantize_value(&[1.0], 0).is_err());
        assert!(quantize_value(&[1.0], 9).is_err());
        assert!(quantize_value(&[1.0, f64::NAN], 4).is_err());
        assert!(QuantizedValueToken::from_parts(vec![4], 0.0, 1.0, 2).is_err());
        assert!(QuantizedValueToken::from_parts(vec![3], 0.0, -1.0, 2).is_err());
    }

    #[test]
    fn accumulate_matches_dequantize() {
        let t = quantize_value(&[0.1, -0.7, 0.33, 0.9], 3).unwrap();
        let mut out = vec![1.0; 4];
        t.accumulate_into(0.5, &mut out);
        for (o, v) in out.iter().zip(t.dequantize()) {
            assert!((o - (1.0 + 0.5 * v)).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn round_trip_error_within_half_scale(
            v in proptest::collection::vec(-100.0f64..100.0, 1..64),
            bits in 1u8..=8,
        ) {
            let t = quantize_value(&v, bits).unwrap();
            let back = t.dequantize();
            let mag = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let ulp = f64::EPSILON * mag;
            for (x, y) in v.iter().zip(&back) {
                prop_assert!((x - y).abs() <= t.scale() / 2.0 + ulp);
            }
        }
    }
}
