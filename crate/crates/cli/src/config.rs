//! Run configuration, read from TOML and overridden by command-line flags.
//!
//! ```toml
//! d = 128               # head dimension
//! m_in = 336            # sketch bits for inlier channels
//! m_out = 32            # sketch bits for outlier channels (8 per channel)
//! outliers = 4          # outlier channel count h
//! bits = 3              # value code width b
//! seed = 0              # master seed; QJL_SEED overrides it
//! epsilon = 0.25        # tail-bound epsilon (validate)
//! delta = 0.01          # tail-bound failure probability (validate)
//! score_epsilon = 0.2   # score-distortion epsilon (validate)
//! n = 256               # sequence length of the score suite (validate)
//! temperature = 1.0     # logits are divided by this before softmax
//! orthogonalize = true  # QR-orthogonalize sketch rows
//! ```
//!
//! The defaults give 3.125 key bits and 3.25 value bits per stored number.

use std::fs;
use std::path::Path;

use qjl::kvcache::{DEFAULT_OUTLIERS, DEFAULT_OUTLIER_BITS_PER_CHANNEL};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "QJL_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub d: usize,
    pub m_in: usize,
    pub m_out: usize,
    pub outliers: usize,
    pub bits: u8,
    pub seed: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub score_epsilon: f64,
    pub n: usize,
    pub temperature: f64,
    pub orthogonalize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d: 128,
            m_in: 336,
            m_out: DEFAULT_OUTLIER_BITS_PER_CHANNEL * DEFAULT_OUTLIERS,
            outliers: DEFAULT_OUTLIERS,
            bits: 3,
            seed: 0,
            epsilon: 0.25,
            delta: 0.01,
            score_epsilon: 0.2,
            n: 256,
            temperature: 1.0,
            orthogonalize: true,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        parse(text).map_err(CliError::Config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are plain values")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| CliError::io(path, e))
    }

    /// Replaces `seed` with `QJL_SEED` when that variable is set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        self.seed = env_seed_or(self.seed)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.d == 0 {
            return bad("d must be >= 1".into());
        }
        if self.outliers > self.d {
            return bad(format!("outliers ({}) exceeds d ({})", self.outliers, self.d));
        }
        if self.outliers < self.d && self.m_in == 0 {
            return bad("m_in must be >= 1 when there are inlier channels".into());
        }
        if self.outliers > 0 && self.m_out == 0 {
            return bad("m_out must be >= 1 when outliers > 0".into());
        }
        if !(1..=8).contains(&self.bits) {
            return bad(format!("bits must be in 1..=8, got {}", self.bits));
        }
        for (name, x) in [
            ("epsilon", self.epsilon),
            ("delta", self.delta),
            ("score_epsilon", self.score_epsilon),
        ] {
            if !(x > 0.0 && x < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {x}"));
            }
        }
        if self.n < 2 {
            return bad(format!("n must be >= 2, got {}", self.n));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }
}

/// `QJL_SEED` if set, otherwise `seed`.
pub fn env_seed_or(seed: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned 64-bit integer"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(seed),
        Err(e) => Err(CliError::Config(format!("{SEED_ENV}: {e}"))),
    }
}

fn parse(text: &str) -> std::result::Result<RunConfig, String> {
    toml::from_str(text).map_err(|e: toml::de::Error| e.message().to_string())
}
