//! Monte Carlo experiments for the estimator's guarantees, and synthetic
//! workloads to drive them.
//!
//! Every experiment is a pure function of its [`TrialConfig`]: the master
//! seed fans out into one seed per trial with [`crate::rng::derive_seed`],
//! trials run in parallel, and results are reduced in trial order so the
//! report does not depend on scheduling.
//!
//! Pass bands are fixed up front:
//! * means: `|mean - truth| <= 4 * stderr`
//! * tails: failure fraction `<= delta`
//! * score distortion: at least 99% of sketch draws within `3 * epsilon`
//! * orthogonal vs i.i.d. variance ratio `<= 1.05`

mod synthetic;
mod trials;

pub use synthetic::{
    gaussian_vector, generate_synthetic_stream, planted_channels, sample_vector, unit_vector,
    SyntheticStream, VectorDistribution, DEFAULT_OUTLIER_FACTOR, PLANTED_CHANNELS,
};
pub use trials::{
    run_distortion_trial, run_orthogonal_comparison, run_orthogonal_comparison_with_pair,
    run_score_trial, run_score_trial_with, run_unbiasedness_trial, run_unbiasedness_with_pair,
    run_validation, Suite, TrialReport, ValidationSettings, MEAN_BAND_SIGMAS,
    ORTHOGONAL_RATIO_LIMIT, SCORE_PASS_FRACTION,
};

use serde::{Deserialize, Serialize};

use crate::error::{QjlError, Result};

/// Sketch size at which the tail bound `P[|est - <q,k>| > eps |q||k|] <= delta`
/// is claimed: `ceil(4/3 * (1 + eps) / eps^2 * ln(2 / delta))`.
pub fn required_m(epsilon: f64, delta: f64) -> Result<usize> {
    check_unit_interval("epsilon", epsilon)?;
    check_unit_interval("delta", delta)?;
    let m = 4.0 / 3.0 * (1.0 + epsilon) / (epsilon * epsilon) * (2.0 / delta).ln();
    Ok(m.ceil() as usize)
}

/// Sketch size for `(1 +- 3 eps)` attention-score distortion over `n` keys of
/// norm at most `r`: `ceil(2 r^2 / eps^2 * ln n)`.
pub fn required_m_scores(epsilon: f64, r: f64, n: usize) -> Result<usize> {
    check_unit_interval("epsilon", epsilon)?;
    if !(r > 0.0) || !r.is_finite() {
        return Err(QjlError::InvalidArgument(format!(
            "norm bound r must be positive, got {r}"
        )));
    }
    if n < 2 {
        return Err(QjlError::InvalidArgument(format!(
            "sequence length must be >= 2, got {n}"
        )));
    }
    let m = 2.0 * r * r / (epsilon * epsilon) * (n as f64).ln();
    Ok(m.ceil() as usize)
}

fn check_unit_interval(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(QjlError::InvalidArgument(format!(
            "{name} must lie in (0, 1), got {x}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub d: usize,
    pub m: usize,
    /// Sequence length for score trials.
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
    pub distribution: VectorDistribution,
    pub orthogonalize: bool,
}

impl TrialConfig {
    pub const MIN_TRIALS: usize = 100;

    pub fn validate(&self) -> Result<()> {
        check_unit_interval("epsilon", self.epsilon)?;
        check_unit_interval("delta", self.delta)?;
        if self.trials < Self::MIN_TRIALS {
            return Err(QjlError::InvalidArgument(format!(
                "need at least {} trials, got {}",
                Self::MIN_TRIALS,
                self.trials
            )));
        }
        if self.d == 0 || self.m == 0 {
            return Err(QjlError::InvalidDimension(format!(
                "d and m must be >= 1 (d = {}, m = {})",
                self.d, self.m
            )));
        }
        Ok(())
    }
}
