//! The 1-bit JL quantizer `k -> sign(S k)` and the asymmetric inner-product
//! estimator built on it.
//!
//! Keys are projected and reduced to sign bits plus their Euclidean norm.
//! Queries are projected with the same sketch but never quantized. The
//! estimate of `<q, k>` is
//!
//! ```text
//! sqrt(pi/2) / m * |k| * <S q, sign(S k)>
//! ```
//!
//! which is unbiased over the draw of a Gaussian `S`.

pub mod packed;

pub use packed::{pack_signs, unpack_signs, SignBits};

use crate::error::{check_len, Result};
use crate::sketch::SketchMatrix;

/// `sqrt(pi / 2)`
pub const SQRT_HALF_PI: f64 = 1.253_314_137_315_500_3;

/// Sign bits of `S k` together with `|k|`.
///
/// A key with `m = 0` bits (an empty sub-vector) is allowed and always
/// estimates to zero, as does any key with norm zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedKey {
    bits: SignBits,
    norm: f64,
}

impl QuantizedKey {
    pub fn new(bits: SignBits, norm: f64) -> Result<Self> {
        if !(norm >= 0.0) || !norm.is_finite() {
            return Err(crate::QjlError::InvalidArgument(format!(
                "key norm must be finite and non-negative, got {norm}"
            )));
        }
        Ok(Self { bits, norm })
    }

    /// The key of an empty sub-vector.
    pub fn empty() -> Self {
        Self {
            bits: SignBits::default(),
            norm: 0.0,
        }
    }

    pub fn bits(&self) -> &SignBits {
        &self.bits
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Sketch dimension.
    pub fn m(&self) -> usize {
        self.bits.len()
    }

    /// Estimator kernel without the length check.
    #[inline]
    pub(crate) fn estimate_unchecked(&self, sq: &SketchedQuery) -> f64 {
        let m = self.bits.len();
        if m == 0 || self.norm == 0.0 {
            return 0.0;
        }
        let signed = self.bits.signed_sum(&sq.values);
        SQRT_HALF_PI / m as f64 * self.norm * signed
    }
}

/// `S q` kept at full precision.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchedQuery {
    values: Vec<f64>,
    dim: usize,
}

impl SketchedQuery {
    pub fn from_values(values: Vec<f64>, dim: usize) -> Self {
        Self { values, dim }
    }

    /// Query of an empty sub-vector.
    pub fn empty() -> Self {
        Self::from_values(Vec::new(), 0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    /// Dimension of the query before projection.
    pub fn source_dim(&self) -> usize {
        self.dim
    }
}

/// Quantizes `k` to `sign(S k)` (with `sign(0) = +1`) and records `|k|`.
pub fn quantize(sketch: &SketchMatrix, k: &[f64]) -> Result<QuantizedKey> {
    let projected = sketch.apply(k)?;
    let norm = k.iter().map(|x| x * x).sum::<f64>().sqrt();
    QuantizedKey::new(SignBits::from_signs_of(&projected), norm)
}

pub fn sketch_query(sketch: &SketchMatrix, q: &[f64]) -> Result<SketchedQuery> {
    Ok(SketchedQuery::from_values(sketch.apply(q)?, q.len()))
}

/// Estimates `<q, k>` from the sketched query and the quantized key.
pub fn estimate_inner_product(sq: &SketchedQuery, key: &QuantizedKey) -> Result<f64> {
    check_len(key.m(), sq.m())?;
    Ok(key.estimate_unchecked(sq))
}
