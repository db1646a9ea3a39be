use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qjl::harness::{VectorDistribution, DEFAULT_OUTLIER_FACTOR};
use qjl::kvcache::DEFAULT_OUTLIER_BITS_PER_CHANNEL;
use qjl::tensor::DType;

use crate::config::RunConfig;
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "qjl", version, about = "1-bit JL sketching for attention key caches")]
pub struct Cli {
    /// Worker threads for parallel sections (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic keys, values and queries as QJLT tensors.
    Gen(GenArgs),
    /// Quantize key/value tensors into a QJLC cache file.
    Quantize(QuantizeArgs),
    /// Decode queries against a cache, optionally scoring against exact attention.
    Decode(DecodeArgs),
    /// Run the Monte Carlo validation suites; exits 4 if any assertion fails.
    Validate(ValidateArgs),
    /// Time exact and quantized single-query decoding across sequence lengths.
    Bench(BenchArgs),
    /// Print the effective run configuration as TOML.
    Config(ShowConfigArgs),
}

/// Quantizer parameters. Flags override `--config`; `QJL_SEED` overrides both.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; missing fields take their defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Head dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Inlier sketch size.
    #[arg(long)]
    pub m_in: Option<usize>,
    /// Outlier sketch size (default: 8 per outlier channel).
    #[arg(long)]
    pub m_out: Option<usize>,
    /// Number of outlier channels h.
    #[arg(long)]
    pub outliers: Option<usize>,
    /// Value code width b.
    #[arg(long)]
    pub bits: Option<u8>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Orthogonalize sketch rows; `--orthogonalize false` disables it.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub orthogonalize: Option<bool>,
}

impl ConfigArgs {
    /// Defaults, then the config file, then flags, then `QJL_SEED`.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.d {
            c.d = v;
        }
        if let Some(v) = self.m_in {
            c.m_in = v;
        }
        if let Some(h) = self.outliers {
            c.outliers = h;
            if self.m_out.is_none() {
                c.m_out = DEFAULT_OUTLIER_BITS_PER_CHANNEL * h;
            }
        }
        if let Some(v) = self.m_out {
            c.m_out = v;
        }
        if let Some(v) = self.bits {
            c.bits = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(v) = self.delta {
            c.delta = v;
        }
        if let Some(v) = self.temperature {
            c.temperature = v;
        }
        if let Some(v) = self.orthogonalize {
            c.orthogonalize = v;
        }
        c.apply_seed_env()?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistArg {
    Sphere,
    Gaussian,
    Outlier,
}

impl DistArg {
    pub fn with_factor(self, factor: f64) -> VectorDistribution {
        match self {
            DistArg::Sphere => VectorDistribution::Sphere,
            DistArg::Gaussian => VectorDistribution::Gaussian,
            DistArg::Outlier => VectorDistribution::PlantedOutliers { factor },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DTypeArg {
    F16,
    F32,
    F64,
}

impl From<DTypeArg> for DType {
    fn from(d: DTypeArg) -> Self {
        match d {
            DTypeArg::F16 => DType::F16,
            DTypeArg::F32 => DType::F32,
            DTypeArg::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 128)]
    pub d: usize,
    /// Number of key/value tokens.
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub num_queries: usize,
    #[arg(long, value_enum, default_value_t = DistArg::Sphere)]
    pub dist: DistArg,
    /// Amplification of the planted channels for `--dist outlier`.
    #[arg(long, default_value_t = DEFAULT_OUTLIER_FACTOR)]
    pub factor: f64,
    /// Overridden by `QJL_SEED` when set.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DTypeArg::F64)]
    pub dtype: DTypeArg,
    /// Output directory for keys.qjlt, values.qjlt and queries.qjlt.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct QuantizeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_name = "PATH")]
    pub keys: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub values: PathBuf,
    /// Leading tokens treated as the prompt for outlier detection (default: all).
    #[arg(long)]
    pub prompt_tokens: Option<usize>,
    /// Cache file to write.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    #[arg(long, value_name = "PATH")]
    pub cache: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub queries: PathBuf,
    /// Exact keys; with `--values`, adds error columns to the report.
    #[arg(long, value_name = "PATH", requires = "values")]
    pub keys: Option<PathBuf>,
    #[arg(long, value_name = "PATH", requires = "keys")]
    pub values: Option<PathBuf>,
    /// TOML run configuration (only `temperature` is used).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Also write the estimated scores (queries x n) as a QJLT tensor.
    #[arg(long, value_name = "PATH")]
    pub scores: Option<PathBuf>,
    /// CSV report path (default: stdout).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// `--m-in` here replaces the sketch size of every suite; without it
    /// each suite uses the size its bound requires.
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Sequence length of the score suite.
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated subset of: unbiasedness, distortion, scores, orthogonal.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    #[arg(long, value_enum, default_value_t = DistArg::Sphere)]
    pub dist: DistArg,
    #[arg(long, default_value_t = DEFAULT_OUTLIER_FACTOR)]
    pub factor: f64,
    /// Trial count for every suite (default: 1e5, 1e4, 100 and 1e4).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Report path; `.json` writes JSON, anything else CSV (default: CSV on stdout).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated sequence lengths.
    #[arg(long, value_delimiter = ',', default_value = "1024,4096,16384,65536")]
    pub lengths: Vec<usize>,
    /// Timed repetitions per path and length; the median is reported.
    #[arg(long, default_value_t = 7)]
    pub reps: usize,
    /// Queries decoded per repetition.
    #[arg(long, default_value_t = 4)]
    pub num_queries: usize,
    /// Evict CPU caches before every timed decode.
    #[arg(long)]
    pub cold: bool,
    /// Size of the eviction pass for `--cold`, in MiB; should exceed the
    /// last-level cache.
    #[arg(long, default_value_t = 256)]
    pub evict_mb: usize,
    /// CSV report path (default: stdout).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ShowConfigArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Write the TOML here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}
