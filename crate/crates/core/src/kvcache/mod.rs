//! Streaming key cache with outlier-channel splitting, the token-wise value
//! quantizer, memory accounting, and the on-disk cache format.
//!
//! Each key is split by a frozen [`OutlierProfile`] into an inlier and an
//! outlier sub-vector. Both halves go through their own independent 1-bit
//! JL quantizer, and the two inner-product estimates are added at query time.
//! With no outlier channels this is exactly the single-sketch quantizer.

mod memory;
mod outlier;
mod serialize;
mod value;

pub use memory::{bits_per_fpn, MemoryBudget, MemoryReport};
pub use outlier::{detect_outliers, OutlierProfile};
pub use serialize::{read_cache, write_cache, CacheHeader, CacheWriter, CACHE_MAGIC, CACHE_VERSION};
pub use value::{dequantize_value, quantize_value, QuantizedValueToken};

use rayon::prelude::*;

use crate::attention::{softmax, ScoreVector};
use crate::error::{check_len, QjlError, Result};
use crate::qjl::{self, QuantizedKey, SketchedQuery};
use crate::rng::{derive_seed, INLIER_STREAM, OUTLIER_STREAM};
use crate::sketch::SketchMatrix;

/// Default number of outlier channels.
pub const DEFAULT_OUTLIERS: usize = 4;
/// Default sketch bits spent per outlier channel.
pub const DEFAULT_OUTLIER_BITS_PER_CHANNEL: usize = 8;

/// Caches shorter than this are scored on the calling thread.
const PARALLEL_SCORE_MIN: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct KeyCacheConfig {
    /// Sketch dimension for the inlier channels.
    pub m_inlier: usize,
    /// Sketch dimension for the outlier channels.
    pub m_outlier: usize,
    /// Master seed; the two sketches use `derive_seed(seed, 0)` and
    /// `derive_seed(seed, 1)`.
    pub seed: u64,
    pub orthogonalize: bool,
}

impl KeyCacheConfig {
    /// `m_inlier` inlier bits and the default 8 bits per outlier channel.
    pub fn with_default_outlier_budget(m_inlier: usize, outliers: usize, seed: u64) -> Self {
        Self {
            m_inlier,
            m_outlier: DEFAULT_OUTLIER_BITS_PER_CHANNEL * outliers,
            seed,
            orthogonalize: false,
        }
    }
}

/// Quantized inlier and outlier halves of one cached key token.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyEntry {
    pub inlier: QuantizedKey,
    pub outlier: QuantizedKey,
}

/// Append-only quantized key cache.
///
/// Appends take `&mut self` and reads take `&self`, so readers always see a
/// consistent prefix and there is never more than one writer.
#[derive(Debug, Clone)]
pub struct KeyCacheState {
    profile: OutlierProfile,
    inlier_sketch: Option<SketchMatrix>,
    outlier_sketch: Option<SketchMatrix>,
    master_seed: u64,
    entries: Vec<KeyEntry>,
}

impl KeyCacheState {
    /// Builds an empty cache. A sketch is only drawn for a non-empty side;
    /// `m_inlier` is ignored when every channel is an outlier and
    /// `m_outlier` when there are none.
    pub fn new(profile: OutlierProfile, config: &KeyCacheConfig) -> Result<Self> {
        Self::with_seeds(
            profile,
            config.m_inlier,
            config.m_outlier,
            config.seed,
            derive_seed(config.seed, INLIER_STREAM),
            derive_seed(config.seed, OUTLIER_STREAM),
            config.orthogonalize,
        )
    }

    /// Builds an empty cache from explicit per-side seeds.
    pub fn with_seeds(
        profile: OutlierProfile,
        m_inlier: usize,
        m_outlier: usize,
        master_seed: u64,
        inlier_seed: u64,
        outlier_seed: u64,
        orthogonalize: bool,
    ) -> Result<Self> {
        let d = profile.dim();
        let h = profile.outlier_count();
        if d == 0 {
            return Err(QjlError::InvalidDimension("key dimension must be >= 1".into()));
        }
        let inlier_dim = d - h;
        let inlier_sketch = if inlier_dim > 0 {
            if m_inlier == 0 {
                return Err(QjlError::InvalidArgument(
                    "inlier sketch dimension must be >= 1".into(),
                ));
            }
            Some(SketchMatrix::generate(m_inlier, inlier_dim, inlier_seed, orthogonalize)?)
        } else {
            None
        };
        let outlier_sketch = if h > 0 {
            if m_outlier == 0 {
                return Err(QjlError::InvalidArgument(
                    "outlier sketch dimension must be >= 1 when outliers are present".into(),
                ));
            }
            // outliers get at least the inlier bit rate per channel
            if inlier_dim > 0 && m_outlier * inlier_dim < m_inlier * h {
                return Err(QjlError::InvalidArgument(format!(
                    "outlier budget {m_outlier} bits for {h} channels is below the inlier rate \
                     {m_inlier}/{inlier_dim}"
                )));
            }
            Some(SketchMatrix::generate(m_outlier, h, outlier_seed, orthogonalize)?)
        } else {
            None
        };
        Ok(Self {
            profile,
            inlier_sketch,
            outlier_sketch,
            master_seed,
            entries: Vec::new(),
        })
    }

    pub fn profile(&self) -> &OutlierProfile {
        &self.profile
    }

    pub fn dim(&self) -> usize {
        self.profile.dim()
    }

    pub fn inlier_sketch(&self) -> Option<&SketchMatrix> {
        self.inlier_sketch.as_ref()
    }

    pub fn outlier_sketch(&self) -> Option<&SketchMatrix> {
        self.outlier_sketch.as_ref()
    }

    /// Inlier sketch rows, 0 when there are no inlier channels.
    pub fn m_inlier(&self) -> usize {
        self.inlier_sketch.as_ref().map_or(0, SketchMatrix::rows)
    }

    /// Outlier sketch rows, 0 when there are no outlier channels.
    pub fn m_outlier(&self) -> usize {
        self.outlier_sketch.as_ref().map_or(0, SketchMatrix::rows)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn is_orthogonalized(&self) -> bool {
        self.inlier_sketch
            .as_ref()
            .or(self.outlier_sketch.as_ref())
            .is_some_and(SketchMatrix::is_orthogonalized)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[KeyEntry] {
        &self.entries
    }

    /// Quantizes one key (split by the profile) without storing it.
    pub fn quantize_key(&self, k: &[f64]) -> Result<KeyEntry> {
        let (inl, out) = self.profile.split(k)?;
        Ok(KeyEntry {
            inlier: quantize_side(self.inlier_sketch.as_ref(), &inl)?,
            outlier: quantize_side(self.outlier_sketch.as_ref(), &out)?,
        })
    }

    pub fn append_key(&mut self, k: &[f64]) -> Result<()> {
        let entry = self.quantize_key(k)?;
        self.entries.push(entry);
        Ok(())
    }

    /// Appends an already quantized entry, e.g. one read back from disk.
    pub fn push_entry(&mut self, entry: KeyEntry) -> Result<()> {
        check_len(self.m_inlier(), entry.inlier.m())?;
        check_len(self.m_outlier(), entry.outlier.m())?;
        self.entries.push(entry);
        Ok(())
    }

    /// Projects a query with both sketches.
    pub fn sketch_query(&self, q: &[f64]) -> Result<(SketchedQuery, SketchedQuery)> {
        let (inl, out) = self.profile.split(q)?;
        Ok((
            sketch_side(self.inlier_sketch.as_ref(), &inl)?,
            sketch_side(self.outlier_sketch.as_ref(), &out)?,
        ))
    }

    /// Estimated `<q, k_j>` for every cached token.
    pub fn estimate_logits(&self, q: &[f64]) -> Result<Vec<f64>> {
        let (sq_in, sq_out) = self.sketch_query(q)?;
        let logit = |e: &KeyEntry| {
            let inl = e.inlier.estimate_unchecked(&sq_in);
            if e.outlier.m() == 0 {
                inl
            } else {
                inl + e.outlier.estimate_unchecked(&sq_out)
            }
        };
        Ok(if self.entries.len() >= PARALLEL_SCORE_MIN {
            self.entries.par_iter().map(logit).collect()
        } else {
            self.entries.iter().map(logit).collect()
        })
    }

    /// Softmax of the estimated logits divided by `temperature` (default 1).
    pub fn estimate_scores(&self, q: &[f64], temperature: Option<f64>) -> Result<ScoreVector> {
        if self.entries.is_empty() {
            return Err(QjlError::InvalidState("key cache is empty".into()));
        }
        softmax(&self.estimate_logits(q)?, temperature.unwrap_or(1.0))
    }

    pub fn memory_report(&self, budget: &MemoryBudget) -> Result<MemoryReport> {
        if self.entries.is_empty() {
            return Err(QjlError::InvalidState(
                "memory report needs a non-empty cache".into(),
            ));
        }
        bits_per_fpn(self.dim(), self.m_inlier(), self.m_outlier(), budget)
    }
}

fn quantize_side(sketch: Option<&SketchMatrix>, x: &[f64]) -> Result<QuantizedKey> {
    match sketch {
        Some(s) => qjl::quantize(s, x),
        None => Ok(QuantizedKey::empty()),
    }
}

fn sketch_side(sketch: Option<&SketchMatrix>, x: &[f64]) -> Result<SketchedQuery> {
    match sketch {
        Some(s) => qjl::sketch_query(s, x),
        None => Ok(SketchedQuery::empty()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qjl::{estimate_inner_product, quantize, sketch_query};
    use crate::rng::{rng_from_seed, standard_normal};

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| (0..d).map(|_| standard_normal(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn no_outliers_reduces_to_single_sketch() {
        let d = 16;
        let config = KeyCacheConfig {
            m_inlier: 40,
            m_outlier: 0,
            seed: 99,
            orthogonalize: false,
        };
        let mut cache = KeyCacheState::new(OutlierProfile::none(d), &config).unwrap();
        let keys = random_rows(30, d, 1);
        for k in &keys {
            cache.append_key(k).unwrap();
        }
        let entry = &cache.entries()[0];
        assert_eq!(entry.outlier.m(), 0);
        assert_eq!(entry.outlier.norm(), 0.0);

        let single = SketchMatrix::gaussian(40, d, derive_seed(99, INLIER_STREAM)).unwrap();
        let q = &random_rows(1, d, 2)[0];
        let sq = sketch_query(&single, q).unwrap();
        let logits = cache.estimate_logits(q).unwrap();
        for (k, got) in keys.iter().zip(&logits) {
            let want = estimate_inner_product(&sq, &quantize(&single, k).unwrap()).unwrap();
            assert_eq!(got.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn hand_split_norms() {
        let profile = OutlierProfile::from_channels(2, &[1]).unwrap();
        let config = KeyCacheConfig {
            m_inlier: 4,
            m_outlier: 8,
            seed: 1,
            orthogonalize: false,
        };
        let mut cache = KeyCacheState::new(profile, &config).unwrap();
        cache.append_key(&[3.0, -4.0]).unwrap();
        let e = &cache.entries()[0];
        assert_eq!(e.inlier.norm(), 3.0);
        assert_eq!(e.outlier.norm(), 4.0);
        assert_eq!(e.inlier.m(), 4);
        assert_eq!(e.outlier.m(), 8);
    }

    #[test]
    fn replay_matches_direct_quantization() {
        let d = 12;
        let profile = OutlierProfile::from_channels(d, &[2, 7, 11]).unwrap();
        let config = KeyCacheConfig {
            m_inlier: 50,
            m_outlier: 24,
            seed: 5,
            orthogonalize: true,
        };
        let mut cache = KeyCacheState::new(profile.clone(), &config).unwrap();
        let keys = random_rows(100, d, 3);
        for k in &keys {
            cache.append_key(k).unwrap();
        }
        assert_eq!(cache.len(), 100);
        let s_in = cache.inlier_sketch().unwrap();
        let s_out = cache.outlier_sketch().unwrap();
        for (k, e) in keys.iter().zip(cache.entries()) {
            let (inl, out) = profile.split(k).unwrap();
            assert_eq!(e.inlier, quantize(s_in, &inl).unwrap());
            assert_eq!(e.outlier, quantize(s_out, &out).unwrap());
        }
    }

    #[test]
    fn all_outlier_channels() {
        let profile = OutlierProfile::from_channels(3, &[0, 1, 2]).unwrap();
        let config = KeyCacheConfig {
            m_inlier: 10,
            m_outlier: 24,
            seed: 1,
            orthogonalize: false,
        };
        let mut cache = KeyCacheState::new(profile, &config).unwrap();
        cache.append_key(&[1.0, 2.0, 2.0]).unwrap();
        assert_eq!(cache.m_inlier(), 0);
        assert_eq!(cache.entries()[0].inlier.m(), 0);
        assert_eq!(cache.entries()[0].outlier.norm(), 3.0);
        assert!(cache.estimate_scores(&[1.0, 0.0, 0.0], None).is_ok());
    }

    #[test]
    fn outlier_budget_below_inlier_rate_is_rejected() {
        let profile = OutlierProfile::from_channels(10, &[0, 1]).unwrap();
        let config = KeyCacheConfig {
            m_inlier: 80,
            m_outlier: 8,
            seed: 1,
            orthogonalize: false,
        };
        assert!(KeyCacheState::new(profile, &config).is_err());
    }

    #[test]
    fn empty_cache_and_dimension_errors() {
        let config = KeyCacheConfig::with_default_outlier_budget(8, 0, 3);
        let mut cache = KeyCacheState::new(OutlierProfile::none(4), &config).unwrap();
        assert!(matches!(
            cache.estimate_scores(&[0.0; 4], None),
            Err(QjlError::InvalidState(_))
        ));
        assert!(cache.memory_report(&MemoryBudget::default()).is_err());
        assert!(cache.append_key(&[1.0; 5]).is_err());
    }

    #[test]
    fn single_token_scores_one() {
        let config = KeyCacheConfig::with_default_outlier_budget(8, 0, 3);
        let mut cache = KeyCacheState::new(OutlierProfile::none(4), &config).unwrap();
        cache.append_key(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        let s = cache.estimate_scores(&[9.0, 1.0, -4.0, 2.0], None).unwrap();
        assert_eq!(s.weights(), &[1.0]);
    }

    #[test]
    fn identical_keys_give_uniform_scores() {
        let config = KeyCacheConfig::with_default_outlier_budget(32, 1, 8);
        let profile = OutlierProfile::from_channels(6, &[4]).unwrap();
        let mut cache = KeyCacheState::new(profile, &config).unwrap();
        let k = [0.3, -1.0, 2.0, 0.1, 7.0, -0.2];
        for _ in 0..5 {
            cache.append_key(&k).unwrap();
        }
        let s = cache
            .estimate_scores(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Some(2.0))
            .unwrap();
        assert!(s.weights().iter().all(|&w| w == 0.2));
    }

    #[test]
    fn appends_do_not_change_earlier_estimates() {
        let config = KeyCacheConfig::with_default_outlier_budget(24, 2, 4);
        let profile = OutlierProfile::from_channels(8, &[0, 5]).unwrap();
        let mut cache = KeyCacheState::new(profile, &config).unwrap();
        let keys = random_rows(20, 8, 6);
        let q = &random_rows(1, 8, 7)[0];
        for k in &keys[..10] {
            cache.append_key(k).unwrap();
        }
        let before = cache.estimate_logits(q).unwrap();
        for k in &keys[10..] {
            cache.append_key(k).unwrap();
        }
        let after = cache.estimate_logits(q).unwrap();
        assert_eq!(&after[..10], &before[..]);
    }

    #[test]
    fn parallel_scoring_matches_serial() {
        let config = KeyCacheConfig::with_default_outlier_budget(16, 1, 4);
        let profile = OutlierProfile::from_channels(4, &[3]).unwrap();
        let mut cache = KeyCacheState::new(profile, &config).unwrap();
        let keys = random_rows(PARALLEL_SCORE_MIN + 10, 4, 8);
        let q = &random_rows(1, 4, 9)[0];
        for k in &keys {
            cache.append_key(k).unwrap();
        }
        let logits = cache.estimate_logits(q).unwrap();
        let (sq_in, sq_out) = cache.sketch_query(q).unwrap();
        for (e, got) in cache.entries().iter().zip(&logits) {
            let want = e.inlier.estimate_unchecked(&sq_in) + e.outlier.estimate_unchecked(&sq_out);
            assert_eq!(got.to_bits(), want.to_bits());
        }
    }
}
