use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QjlError, Result};
use crate::rng::{derive_seed, rng_from_seed, standard_normal};
use crate::tensor::Matrix;

/// Number of channels amplified by [`VectorDistribution::PlantedOutliers`].
pub const PLANTED_CHANNELS: usize = 4;
pub const DEFAULT_OUTLIER_FACTOR: f64 = 10.0;

const KEY_STREAM: u64 = 0;
const VALUE_STREAM: u64 = 1;
const QUERY_STREAM: u64 = 2;
const PLANT_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum VectorDistribution {
    /// Uniform on the unit sphere.
    Sphere,
    /// I.i.d. standard normal coordinates.
    Gaussian,
    /// Standard normal, with [`PLANTED_CHANNELS`] fixed key channels
    /// multiplied by `factor`.
    PlantedOutliers { factor: f64 },
}

impl VectorDistribution {
    pub fn name(&self) -> &'static str {
        match self {
            VectorDistribution::Sphere => "sphere",
            VectorDistribution::Gaussian => "gaussian",
            VectorDistribution::PlantedOutliers { .. } => "outlier",
        }
    }
}

/// Synthetic keys, values and queries for one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    pub keys: Matrix,
    pub values: Matrix,
    pub queries: Matrix,
    /// Amplified key channels, ascending; empty unless the distribution
    /// plants outliers.
    pub planted: Vec<usize>,
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| standard_normal(rng)).collect()
}

pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian_vector(rng, d);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// One draw from `dist`. Planted channels are not applied here.
pub fn sample_vector<R: Rng + ?Sized>(rng: &mut R, d: usize, dist: VectorDistribution) -> Vec<f64> {
    match dist {
        VectorDistribution::Sphere => unit_vector(rng, d),
        VectorDistribution::Gaussian | VectorDistribution::PlantedOutliers { .. } => {
            gaussian_vector(rng, d)
        }
    }
}

/// The channels amplified for a given seed: `min(4, d)` distinct indices.
pub fn planted_channels(d: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(derive_seed(seed, PLANT_STREAM));
    let mut chosen = sample(&mut rng, d, PLANTED_CHANNELS.min(d)).into_vec();
    chosen.sort_unstable();
    chosen
}

fn sample_matrix(rows: usize, d: usize, dist: VectorDistribution, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(rows * d);
    for _ in 0..rows {
        data.extend(sample_vector(&mut rng, d, dist));
    }
    Matrix::new(rows, d, data).expect("shape is consistent")
}

/// Deterministic keys (`n x d`), values (`n x d`) and queries
/// (`queries x d`). Keys, values and queries use independent streams of
/// `seed`.
pub fn generate_synthetic_stream(
    d: usize,
    n: usize,
    queries: usize,
    dist: VectorDistribution,
    seed: u64,
) -> Result<SyntheticStream> {
    if d == 0 {
        return Err(QjlError::InvalidDimension("d must be >= 1".into()));
    }
    if let VectorDistribution::PlantedOutliers { factor } = dist {
        if !factor.is_finite() || factor <= 0.0 {
            return Err(QjlError::InvalidArgument(format!(
                "outlier factor must be positive, got {factor}"
            )));
        }
    }
    let mut keys = sample_matrix(n, d, dist, derive_seed(seed, KEY_STREAM));
    let values = sample_matrix(n, d, dist, derive_seed(seed, VALUE_STREAM));
    let queries = sample_matrix(queries, d, dist, derive_seed(seed, QUERY_STREAM));
    let planted = match dist {
        VectorDistribution::PlantedOutliers { factor } => {
            let channels = planted_channels(d, seed);
            for i in 0..n {
                let row = keys.row_mut(i);
                channels.iter().for_each(|&c| row[c] *= factor);
            }
            channels
        }
        _ => Vec::new(),
    };
    Ok(SyntheticStream {
        keys,
        values,
        queries,
        planted,
    })
}
