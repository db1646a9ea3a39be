//! Single-query attention decoding, exact and through the quantized cache.

use serde::Serialize;

use crate::error::{check_len, QjlError, Result};
use crate::kvcache::{KeyCacheState, QuantizedValueToken};
use crate::sketch::dot;
use crate::tensor::Matrix;

/// Softmax weights over cached tokens. Non-negative, sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    weights: Vec<f64>,
}

impl ScoreVector {
    /// Accepts weights that are non-negative and sum to 1 within 1e-6.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(QjlError::InvalidArgument("score vector is empty".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(QjlError::InvalidArgument(
                "score weights must be non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(QjlError::InvalidArgument(format!(
                "score weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `softmax(logits / temperature)` with max subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<ScoreVector> {
    if logits.is_empty() {
        return Err(QjlError::InvalidArgument("softmax of an empty vector".into()));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(QjlError::InvalidArgument(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    if let Some(x) = logits.iter().find(|x| !x.is_finite()) {
        return Err(QjlError::InvalidArgument(format!("non-finite logit {x}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logits
        .iter()
        .map(|&x| ((x - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(ScoreVector { weights })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub output: Vec<f64>,
    pub scores: ScoreVector,
}

/// Reference decode: exact logits `<q, k_i> / temperature`, softmax, and the
/// score-weighted sum of values.
pub fn exact_decode(
    q: &[f64],
    keys: &Matrix,
    values: &Matrix,
    temperature: f64,
) -> Result<DecodeResult> {
    if keys.rows() == 0 {
        return Err(QjlError::InvalidArgument("no cached tokens".into()));
    }
    check_len(keys.cols(), q.len())?;
    check_len(keys.rows(), values.rows())?;
    let logits: Vec<f64> = keys.iter_rows().map(|k| dot(q, k)).collect();
    let scores = softmax(&logits, temperature)?;
    let mut output = vec![0.0f64; values.cols()];
    for (w, v) in scores.weights().iter().zip(values.iter_rows()) {
        for (o, x) in output.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok(DecodeResult { output, scores })
}

/// Decode through the quantized key cache and dequantized value tokens.
pub fn quantized_decode(
    q: &[f64],
    state: &KeyCacheState,
    values: &[QuantizedValueToken],
    temperature: f64,
) -> Result<DecodeResult> {
    if values.len() != state.len() {
        return Err(QjlError::InvalidState(format!(
            "cache holds {} keys but {} value tokens were given",
            state.len(),
            values.len()
        )));
    }
    let scores = state.estimate_scores(q, Some(temperature))?;
    let d = values[0].dim();
    if let Some(v) = values.iter().find(|v| v.dim() != d) {
        return Err(QjlError::DimensionMismatch {
            expected: d,
            actual: v.dim(),
        });
    }
    let mut output = vec![0.0f64; d];
    for (w, v) in scores.weights().iter().zip(values) {
        v.accumulate_into(*w, &mut output);
    }
    Ok(DecodeResult { output, scores })
}

/// Discrepancies between an exact and an approximate decode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorMetrics {
    /// `max_i |approx_i - exact_i| / exact_i`
    pub max_rel_score_err: f64,
    /// Half the L1 distance between the score vectors.
    pub tv_distance: f64,
    /// `|o_approx - o_exact| / |o_exact|`, or the absolute error when the
    /// exact output is zero.
    pub rel_l2_output_err: f64,
}

pub fn error_metrics(exact: &DecodeResult, approx: &DecodeResult) -> Result<ErrorMetrics> {
    check_len(exact.scores.len(), approx.scores.len())?;
    check_len(exact.output.len(), approx.output.len())?;
    let mut max_rel = 0.0f64;
    let mut l1 = 0.0f64;
    for (&s, &t) in exact.scores.weights().iter().zip(approx.scores.weights()) {
        let diff = (t - s).abs();
        l1 += diff;
        let rel = if s > 0.0 {
            diff / s
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        max_rel = max_rel.max(rel);
    }
    let err = exact
        .output
        .iter()
        .zip(&approx.output)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm = exact.output.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(ErrorMetrics {
        max_rel_score_err: max_rel,
        tv_distance: l1 / 2.0,
        rel_l2_output_err: if norm > 0.0 { err / norm } else { err },
    })
}
