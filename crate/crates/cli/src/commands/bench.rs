use std::hint::black_box;
use std::time::Instant;

use qjl::attention::{exact_decode, quantized_decode};
use qjl::harness::{generate_synthetic_stream, VectorDistribution};
use qjl::kvcache::{detect_outliers, quantize_value};
use qjl::{KeyCacheConfig, KeyCacheState, QuantizedValueToken};
use serde::Serialize;

use super::output;
use crate::args::BenchArgs;
use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Tokens used for outlier detection in each benchmark cache.
const PROMPT_TOKENS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodePath {
    Exact,
    Quantized,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub path: DecodePath,
    pub n: usize,
    pub d: usize,
    pub reps: usize,
    /// Seconds per decoded query.
    pub median_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    /// Least-squares slope of log(median) on log(n) for this path.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub lengths: Vec<usize>,
    pub reps: usize,
    /// Queries decoded per repetition.
    pub queries: usize,
    /// Bytes streamed through before each timed decode so it starts from a
    /// cold cache; `None` times back-to-back decodes.
    pub evict_bytes: Option<usize>,
}

/// Per-query decode time for every (path, length) pair.
pub fn measure(config: &RunConfig, plan: &BenchPlan) -> Result<Vec<BenchRow>> {
    let BenchPlan { lengths, reps, queries, .. } = plan;
    let (reps, queries) = (*reps, *queries);
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(CliError::Config("--lengths must be positive".into()));
    }
    if reps == 0 || queries == 0 {
        return Err(CliError::Config("--reps and --num-queries must be >= 1".into()));
    }
    let mut evict = Evictor::new(plan.evict_bytes.unwrap_or(0));
    let mut rows = Vec::new();
    for &n in lengths {
        let stream = generate_synthetic_stream(config.d, n, queries, VectorDistribution::Sphere, config.seed)?;
        let profile = detect_outliers(&stream.keys.head(PROMPT_TOKENS.min(n)), config.outliers)?;
        let mut state = KeyCacheState::new(
            profile,
            &KeyCacheConfig {
                m_inlier: config.m_in,
                m_outlier: config.m_out,
                seed: config.seed,
                orthogonalize: config.orthogonalize,
            },
        )?;
        let mut tokens: Vec<QuantizedValueToken> = Vec::with_capacity(n);
        for (k, v) in stream.keys.iter_rows().zip(stream.values.iter_rows()) {
            state.append_key(k)?;
            tokens.push(quantize_value(v, config.bits)?);
        }

        let t = config.temperature;
        let exact = time_per_query(reps, queries, &mut evict, |i| {
            let q = stream.queries.row(i);
            exact_decode(q, &stream.keys, &stream.values, t).map(|r| r.output)
        })?;
        let quantized = time_per_query(reps, queries, &mut evict, |i| {
            quantized_decode(stream.queries.row(i), &state, &tokens, t).map(|r| r.output)
        })?;
        for (path, times) in [(DecodePath::Exact, exact), (DecodePath::Quantized, quantized)] {
            rows.push(BenchRow {
                path,
                n,
                d: config.d,
                reps,
                median_seconds: median(&times),
                min_seconds: times[0],
                max_seconds: times[times.len() - 1],
                slope: None,
            });
        }
    }
    for path in [DecodePath::Exact, DecodePath::Quantized] {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.path == path)
            .map(|r| ((r.n as f64).ln(), r.median_seconds.ln()))
            .collect();
        let slope = fit_slope(&points);
        rows.iter_mut().filter(|r| r.path == path).for_each(|r| r.slope = slope);
    }
    Ok(rows)
}

/// Reads through a buffer larger than the last-level cache.
struct Evictor {
    buf: Vec<u64>,
}

impl Evictor {
    fn new(bytes: usize) -> Self {
        let words = bytes / 8;
        Self {
            buf: (0..words as u64).collect(),
        }
    }

    fn run(&mut self) {
        if !self.buf.is_empty() {
            black_box(self.buf.iter().fold(0u64, |a, &x| a.wrapping_add(x)));
        }
    }
}

/// Sorted per-query times of `reps` timed passes over `queries` queries,
/// after one untimed warm-up pass.
fn time_per_query<T>(
    reps: usize,
    queries: usize,
    evict: &mut Evictor,
    mut decode: impl FnMut(usize) -> qjl::Result<T>,
) -> Result<Vec<f64>> {
    for i in 0..queries {
        black_box(decode(i)?);
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut elapsed = 0.0;
        for i in 0..queries {
            evict.run();
            let start = Instant::now();
            black_box(decode(i)?);
            elapsed += start.elapsed().as_secs_f64();
        }
        times.push(elapsed / queries as f64);
    }
    times.sort_by(f64::total_cmp);
    Ok(times)
}

fn median(sorted: &[f64]) -> f64 {
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

/// Ordinary least-squares slope; `None` with fewer than two distinct x.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn run(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    let config = args.config.resolve()?;
    let plan = BenchPlan {
        lengths: args.lengths.clone(),
        reps: args.reps,
        queries: args.num_queries,
        evict_bytes: args.cold.then_some(args.evict_mb << 20),
    };
    let rows = measure(&config, &plan)?;
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("writing report: {e}")))?;
    for path in [DecodePath::Exact, DecodePath::Quantized] {
        if let Some(slope) = rows.iter().find(|r| r.path == path).and_then(|r| r.slope) {
            eprintln!("{path:?} decode: log-log slope {slope:.3}");
        }
    }
    Ok(rows)
}
