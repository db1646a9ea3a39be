use std::fmt;

use serde::Serialize;

use crate::error::{QjlError, Result};

/// Bit width of an uncompressed cache entry.
pub const BASELINE_BITS: f64 = 16.0;

/// Storage policy used for accounting: value code width plus the widths of
/// the per-token constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryBudget {
    pub value_bits: u8,
    /// Bits per stored key norm (two norms per token).
    pub norm_bits: u32,
    /// Bits for the value zero point and scale together.
    pub zero_scale_bits: u32,
}

impl Default for MemoryBudget {
    fn default() -> Self {
        Self {
            value_bits: 3,
            norm_bits: 16,
            zero_scale_bits: 32,
        }
    }
}

/// Average storage bits per original floating-point number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryReport {
    pub key_bits_per_fpn: f64,
    pub value_bits_per_fpn: f64,
    /// Mean of key and value rates; keys and values hold the same number of FPNs.
    pub total_bits_per_fpn: f64,
    pub baseline_bits_per_fpn: f64,
    /// `baseline / total`.
    pub reduction: f64,
}

impl fmt::Display for MemoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "key bits/FPN:   {:.4}", self.key_bits_per_fpn)?;
        writeln!(f, "value bits/FPN: {:.4}", self.value_bits_per_fpn)?;
        writeln!(f, "total bits/FPN: {:.4}", self.total_bits_per_fpn)?;
        write!(
            f,
            "reduction vs {}-bit: {:.3}x",
            self.baseline_bits_per_fpn, self.reduction
        )
    }
}

/// Key rate `(m_in + m_out + 2 * norm_bits) / d`, value rate
/// `b + zero_scale_bits / d`.
pub fn bits_per_fpn(
    d: usize,
    m_inlier: usize,
    m_outlier: usize,
    budget: &MemoryBudget,
) -> Result<MemoryReport> {
    if d == 0 {
        return Err(QjlError::InvalidDimension("d must be >= 1".into()));
    }
    let d = d as f64;
    let key = (m_inlier + m_outlier) as f64 / d + 2.0 * budget.norm_bits as f64 / d;
    let value = budget.value_bits as f64 + budget.zero_scale_bits as f64 / d;
    let total = (key + value) / 2.0;
    Ok(MemoryReport {
        key_bits_per_fpn: key,
        value_bits_per_fpn: value,
        total_bits_per_fpn: total,
        baseline_bits_per_fpn: BASELINE_BITS,
        reduction: BASELINE_BITS / total,
    })
}
