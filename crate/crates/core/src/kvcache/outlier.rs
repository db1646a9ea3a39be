use crate::error::{check_len, QjlError, Result};
use crate::tensor::Matrix;

/// Channels whose keys are routed to the outlier quantizer.
///
/// Detected once from the prompt and frozen afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierProfile {
    dim: usize,
    /// Sorted ascending.
    outliers: Vec<usize>,
    /// Sorted ascending, complement of `outliers`.
    inliers: Vec<usize>,
    /// Mean `|x|` per channel over the prompt (all zeros for a forced profile).
    mean_abs: Vec<f64>,
}

impl OutlierProfile {
    /// Uses `channels` as the outlier set without looking at data.
    pub fn from_channels(dim: usize, channels: &[usize]) -> Result<Self> {
        Self::build(dim, channels.to_vec(), vec![0.0; dim])
    }

    /// Profile that sends every channel to the inlier quantizer.
    pub fn none(dim: usize) -> Self {
        Self::build(dim, Vec::new(), vec![0.0; dim]).expect("empty outlier set is valid")
    }

    /// Rebuilds a profile from stored channels and statistics.
    pub fn from_parts(dim: usize, channels: Vec<usize>, mean_abs: Vec<f64>) -> Result<Self> {
        check_len(dim, mean_abs.len())?;
        Self::build(dim, channels, mean_abs)
    }

    fn build(dim: usize, mut channels: Vec<usize>, mean_abs: Vec<f64>) -> Result<Self> {
        channels.sort_unstable();
        channels.dedup();
        if let Some(&c) = channels.iter().find(|&&c| c >= dim) {
            return Err(QjlError::InvalidArgument(format!(
                "outlier channel {c} out of range for dimension {dim}"
            )));
        }
        let mut is_outlier = vec![false; dim];
        channels.iter().for_each(|&c| is_outlier[c] = true);
        let inliers = (0..dim).filter(|&c| !is_outlier[c]).collect();
        Ok(Self {
            dim,
            outliers: channels,
            inliers,
            mean_abs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outlier_channels(&self) -> &[usize] {
        &self.outliers
    }

    pub fn inlier_channels(&self) -> &[usize] {
        &self.inliers
    }

    /// Number of outlier channels `h`.
    pub fn outlier_count(&self) -> usize {
        self.outliers.len()
    }

    pub fn mean_abs(&self) -> &[f64] {
        &self.mean_abs
    }

    /// Splits `x` into its (inlier, outlier) sub-vectors, each in ascending
    /// channel order.
    pub fn split(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(self.dim, x.len())?;
        Ok((
            self.inliers.iter().map(|&c| x[c]).collect(),
            self.outliers.iter().map(|&c| x[c]).collect(),
        ))
    }
}

/// Picks the `h` channels with the largest mean absolute value over the
/// prompt rows; ties go to the lower channel index.
pub fn detect_outliers(prompt: &Matrix, h: usize) -> Result<OutlierProfile> {
    if prompt.rows() == 0 {
        return Err(QjlError::InvalidArgument(
            "outlier detection needs at least one prompt token".into(),
        ));
    }
    let d = prompt.cols();
    if h > d {
        return Err(QjlError::InvalidArgument(format!(
            "cannot select {h} outlier channels out of {d}"
        )));
    }
    let mut mean_abs = vec![0.0f64; d];
    for row in prompt.iter_rows() {
        for (acc, x) in mean_abs.iter_mut().zip(row) {
            *acc += x.abs();
        }
    }
    let n = prompt.rows() as f64;
    mean_abs.iter_mut().for_each(|m| *m /= n);

    let mut order: Vec<usize> = (0..d).collect();
    // stable sort keeps lower indices first among equal magnitudes
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]));
    order.truncate(h);
    OutlierProfile::build(d, order, mean_abs)
}
