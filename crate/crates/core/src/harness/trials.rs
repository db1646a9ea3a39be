use rayon::prelude::*;
use serde::Serialize;

use super::synthetic::{sample_vector, VectorDistribution};
use super::{required_m, required_m_scores, TrialConfig};
use crate::attention::softmax;
use crate::error::{check_len, QjlError, Result};
use crate::kvcache::{KeyCacheConfig, KeyCacheState, OutlierProfile};
use crate::qjl::{estimate_inner_product, quantize, sketch_query};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sketch::{dot, SketchMatrix};
use crate::tensor::Matrix;

/// Half-width of the acceptance band for sample means, in standard errors.
pub const MEAN_BAND_SIGMAS: f64 = 4.0;
/// Fraction of sketch draws that must meet the score-distortion bound.
pub const SCORE_PASS_FRACTION: f64 = 0.99;
/// Largest accepted orthogonal / i.i.d. estimator variance ratio.
pub const ORTHOGONAL_RATIO_LIMIT: f64 = 1.05;

const PAIR_STREAM: u64 = 0x7061_6972;
const SKETCH_STREAM: u64 = 0x736b_6574;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Unbiasedness,
    Distortion,
    Scores,
    Orthogonal,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Unbiasedness,
        Suite::Distortion,
        Suite::Scores,
        Suite::Orthogonal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Unbiasedness => "unbiasedness",
            Suite::Distortion => "distortion",
            Suite::Scores => "scores",
            Suite::Orthogonal => "orthogonal",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|suite| suite.name() == s)
    }
}

/// Flat summary of one experiment. Fields that do not apply to a suite are
/// `None` (empty cells in CSV).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub suite: Suite,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub trials: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub orthogonalized: bool,
    /// Sketch size the relevant bound asks for, when one applies.
    pub required_m: Option<usize>,
    pub mean_estimate: Option<f64>,
    pub truth: Option<f64>,
    pub bias: Option<f64>,
    pub std_error: Option<f64>,
    pub z_score: Option<f64>,
    pub failure_fraction: Option<f64>,
    pub pass_fraction: Option<f64>,
    /// Bound the suite's statistic is compared against.
    pub threshold: Option<f64>,
    pub score_err_p50: Option<f64>,
    pub score_err_p90: Option<f64>,
    pub score_err_p99: Option<f64>,
    pub score_err_max: Option<f64>,
    pub variance_iid: Option<f64>,
    pub variance_orthogonal: Option<f64>,
    pub variance_ratio: Option<f64>,
    pub passed: bool,
}

impl TrialReport {
    fn blank(suite: Suite, cfg: &TrialConfig) -> Self {
        Self {
            suite,
            d: cfg.d,
            m: cfg.m,
            n: cfg.n,
            trials: cfg.trials,
            epsilon: cfg.epsilon,
            delta: cfg.delta,
            orthogonalized: cfg.orthogonalize,
            required_m: None,
            mean_estimate: None,
            truth: None,
            bias: None,
            std_error: None,
            z_score: None,
            failure_fraction: None,
            pass_fraction: None,
            threshold: None,
            score_err_p50: None,
            score_err_p90: None,
            score_err_p99: None,
            score_err_max: None,
            variance_iid: None,
            variance_orthogonal: None,
            variance_ratio: None,
            passed: false,
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn sketch_seed(cfg: &TrialConfig, trial: usize) -> u64 {
    derive_seed(derive_seed(cfg.seed, SKETCH_STREAM), trial as u64)
}

fn single_estimate(sketch: &SketchMatrix, q: &[f64], k: &[f64]) -> Result<f64> {
    estimate_inner_product(&sketch_query(sketch, q)?, &quantize(sketch, k)?)
}

fn fixed_pair(cfg: &TrialConfig) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, PAIR_STREAM));
    let q = sample_vector(&mut rng, cfg.d, cfg.distribution);
    let k = sample_vector(&mut rng, cfg.d, cfg.distribution);
    (q, k)
}

fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Mean of the estimator for one fixed pair over `cfg.trials` independent
/// sketches, drawn from `cfg.distribution` with the config seed.
pub fn run_unbiasedness_trial(cfg: &TrialConfig) -> Result<TrialReport> {
    cfg.validate()?;
    let (q, k) = fixed_pair(cfg);
    run_unbiasedness_with_pair(cfg, &q, &k)
}

/// Unbiasedness experiment for a caller-chosen pair.
pub fn run_unbiasedness_with_pair(cfg: &TrialConfig, q: &[f64], k: &[f64]) -> Result<TrialReport> {
    cfg.validate()?;
    check_len(cfg.d, q.len())?;
    check_len(cfg.d, k.len())?;
    let estimates = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let s = SketchMatrix::generate(cfg.m, cfg.d, sketch_seed(cfg, t), cfg.orthogonalize)?;
            single_estimate(&s, q, k)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, var) = mean_and_variance(&estimates);
    let truth = dot(q, k);
    let stderr = (var / cfg.trials as f64).sqrt();
    let bias = mean - truth;
    let z = if stderr > 0.0 {
        bias / stderr
    } else if bias == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(bias)
    };
    let mut report = TrialReport::blank(Suite::Unbiasedness, cfg);
    report.mean_estimate = Some(mean);
    report.truth = Some(truth);
    report.bias = Some(bias);
    report.std_error = Some(stderr);
    report.z_score = Some(z);
    report.threshold = Some(MEAN_BAND_SIGMAS);
    report.passed = z.abs() <= MEAN_BAND_SIGMAS;
    Ok(report)
}

/// Fraction of trials where `|est - <q,k>| > epsilon |q| |k|`. Each trial
/// draws a fresh pair and a fresh sketch. Runs even when `m` is below the
/// required size so undersized configurations can be exercised.
pub fn run_distortion_trial(cfg: &TrialConfig) -> Result<TrialReport> {
    cfg.validate()?;
    let pair_base = derive_seed(cfg.seed, PAIR_STREAM);
    let failures = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(pair_base, t as u64));
            let q = sample_vector(&mut rng, cfg.d, cfg.distribution);
            let k = sample_vector(&mut rng, cfg.d, cfg.distribution);
            let s = SketchMatrix::generate(cfg.m, cfg.d, sketch_seed(cfg, t), cfg.orthogonalize)?;
            let err = (single_estimate(&s, &q, &k)? - dot(&q, &k)).abs();
            Ok(err > cfg.epsilon * norm(&q) * norm(&k))
        })
        .collect::<Result<Vec<bool>>>()?;
    let fraction = failures.iter().filter(|&&f| f).count() as f64 / cfg.trials as f64;
    let mut report = TrialReport::blank(Suite::Distortion, cfg);
    report.required_m = Some(required_m(cfg.epsilon, cfg.delta)?);
    report.failure_fraction = Some(fraction);
    report.threshold = Some(cfg.delta);
    report.passed = fraction <= cfg.delta;
    Ok(report)
}

/// Score distortion for `cfg.n` fixed unit-norm keys and one unit-norm
/// query drawn from the config seed.
pub fn run_score_trial(cfg: &TrialConfig) -> Result<TrialReport> {
    cfg.validate()?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, PAIR_STREAM));
    let mut unit = || {
        let mut v = sample_vector(&mut rng, cfg.d, cfg.distribution);
        let r = norm(&v);
        v.iter_mut().for_each(|x| *x /= r);
        v
    };
    let q = unit();
    let rows: Vec<Vec<f64>> = (0..cfg.n).map(|_| unit()).collect();
    run_score_trial_with(cfg, &Matrix::from_rows(&rows)?, &q)
}

/// For each of `cfg.trials` sketch draws, the largest relative score error
/// `max_i |approx_i - exact_i| / exact_i`. Passes when at least 99% of draws
/// stay within `3 * epsilon`.
pub fn run_score_trial_with(cfg: &TrialConfig, keys: &Matrix, q: &[f64]) -> Result<TrialReport> {
    cfg.validate()?;
    check_len(cfg.d, keys.cols())?;
    check_len(cfg.d, q.len())?;
    if keys.rows() == 0 {
        return Err(QjlError::InvalidArgument("score trial needs keys".into()));
    }
    let exact_logits: Vec<f64> = keys.iter_rows().map(|k| dot(q, k)).collect();
    let exact = softmax(&exact_logits, 1.0)?;
    let bound = 3.0 * cfg.epsilon;
    let mut errors = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let config = KeyCacheConfig {
                m_inlier: cfg.m,
                m_outlier: 0,
                seed: sketch_seed(cfg, t),
                orthogonalize: cfg.orthogonalize,
            };
            let mut cache = KeyCacheState::new(OutlierProfile::none(cfg.d), &config)?;
            for k in keys.iter_rows() {
                cache.append_key(k)?;
            }
            let approx = cache.estimate_scores(q, None)?;
            Ok(exact
                .weights()
                .iter()
                .zip(approx.weights())
                .map(|(s, t)| (t - s).abs() / s)
                .fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    let within = errors.iter().filter(|&&e| e <= bound).count() as f64 / cfg.trials as f64;
    errors.sort_by(f64::total_cmp);
    let mut report = TrialReport::blank(Suite::Scores, cfg);
    report.n = keys.rows();
    report.required_m = required_m_scores(cfg.epsilon, 1.0, keys.rows()).ok();
    report.pass_fraction = Some(within);
    report.threshold = Some(bound);
    report.score_err_p50 = Some(percentile(&errors, 0.5));
    report.score_err_p90 = Some(percentile(&errors, 0.9));
    report.score_err_p99 = Some(percentile(&errors, 0.99));
    report.score_err_max = errors.last().copied();
    report.passed = within >= SCORE_PASS_FRACTION;
    Ok(report)
}

/// Estimator variance with i.i.d. Gaussian sketches against their
/// orthogonalized versions, on the same seeds and a fixed pair.
pub fn run_orthogonal_comparison(cfg: &TrialConfig) -> Result<TrialReport> {
    cfg.validate()?;
    let (q, k) = fixed_pair(cfg);
    run_orthogonal_comparison_with_pair(cfg, &q, &k)
}

pub fn run_orthogonal_comparison_with_pair(
    cfg: &TrialConfig,
    q: &[f64],
    k: &[f64],
) -> Result<TrialReport> {
    cfg.validate()?;
    check_len(cfg.d, q.len())?;
    check_len(cfg.d, k.len())?;
    let pairs = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let gaussian = SketchMatrix::gaussian(cfg.m, cfg.d, sketch_seed(cfg, t))?;
            let iid = single_estimate(&gaussian, q, k)?;
            let orth = single_estimate(&gaussian.orthogonalize(), q, k)?;
            Ok((iid, orth))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (iid, orth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (_, var_iid) = mean_and_variance(&iid);
    let (mean_orth, var_orth) = mean_and_variance(&orth);
    let ratio = var_orth / var_iid;
    let mut report = TrialReport::blank(Suite::Orthogonal, cfg);
    report.orthogonalized = true;
    report.truth = Some(dot(q, k));
    report.mean_estimate = Some(mean_orth);
    report.variance_iid = Some(var_iid);
    report.variance_orthogonal = Some(var_orth);
    report.variance_ratio = Some(ratio);
    report.threshold = Some(ORTHOGONAL_RATIO_LIMIT);
    report.passed = ratio <= ORTHOGONAL_RATIO_LIMIT;
    Ok(report)
}

/// Parameters of the full validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSettings {
    pub d: usize,
    /// Sequence length for the score suite.
    pub n: usize,
    /// Tail-bound epsilon for the distortion suite.
    pub epsilon: f64,
    pub delta: f64,
    /// Epsilon for the score suite.
    pub score_epsilon: f64,
    pub unbiasedness_m: usize,
    pub unbiasedness_trials: usize,
    pub distortion_trials: usize,
    pub score_draws: usize,
    pub orthogonal_trials: usize,
    /// When set, every suite uses this sketch size instead of its default.
    pub m_override: Option<usize>,
    pub seed: u64,
    pub orthogonalize: bool,
    pub distribution: VectorDistribution,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self {
            d: 128,
            n: 256,
            epsilon: 0.25,
            delta: 0.01,
            score_epsilon: 0.2,
            unbiasedness_m: 8,
            unbiasedness_trials: 100_000,
            distortion_trials: 10_000,
            score_draws: 100,
            orthogonal_trials: 10_000,
            m_override: None,
            seed: 0,
            orthogonalize: true,
            distribution: VectorDistribution::Sphere,
        }
    }
}

impl ValidationSettings {
    /// Trial configuration used for `suite`.
    pub fn trial_config(&self, suite: Suite) -> Result<TrialConfig> {
        let base = TrialConfig {
            d: self.d,
            m: 1,
            n: self.n,
            epsilon: self.epsilon,
            delta: self.delta,
            trials: 0,
            seed: derive_seed(self.seed, suite as u64),
            distribution: self.distribution,
            orthogonalize: self.orthogonalize,
        };
        let cfg = match suite {
            Suite::Unbiasedness => TrialConfig {
                m: self.m_override.unwrap_or(self.unbiasedness_m),
                trials: self.unbiasedness_trials,
                ..base
            },
            Suite::Distortion => TrialConfig {
                m: match self.m_override {
                    Some(m) => m,
                    None => required_m(self.epsilon, self.delta)?,
                },
                trials: self.distortion_trials,
                ..base
            },
            Suite::Scores => TrialConfig {
                m: match self.m_override {
                    Some(m) => m,
                    None => required_m_scores(self.score_epsilon, 1.0, self.n)?,
                },
                epsilon: self.score_epsilon,
                trials: self.score_draws,
                ..base
            },
            Suite::Orthogonal => TrialConfig {
                m: self.m_override.unwrap_or((self.d / 2).max(1)),
                trials: self.orthogonal_trials,
                ..base
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs the selected suites (all when `only` is empty) in a fixed order.
pub fn run_validation(settings: &ValidationSettings, only: &[Suite]) -> Result<Vec<TrialReport>> {
    Suite::ALL
        .into_iter()
        .filter(|s| only.is_empty() || only.contains(s))
        .map(|suite| {
            let cfg = settings.trial_config(suite)?;
            match suite {
                Suite::Unbiasedness => run_unbiasedness_trial(&cfg),
                Suite::Distortion => run_distortion_trial(&cfg),
                Suite::Scores => run_score_trial(&cfg),
                Suite::Orthogonal => run_orthogonal_comparison(&cfg),
            }
        })
        .collect()
}
