//! Quantized Johnson-Lindenstrauss (QJL) sketches for compressing attention
//! key caches.
//!
//! A key `k` is stored as the sign bits of `S k` for a random Gaussian
//! projection `S`, plus its norm. Queries are projected with the same `S` but
//! kept at full precision, which gives an unbiased estimate of `<q, k>` with
//! no per-block quantization constants on the key side.
//!
//! * [`sketch`]: seeded Gaussian projections and their row-orthogonal variant
//! * [`qjl`]: the 1-bit quantizer, packed sign storage and the estimator
//! * [`kvcache`]: streaming key cache with outlier channels, value
//!   quantization, memory accounting and the `QJLC` file format
//! * [`attention`]: exact and quantized single-query decoding
//! * [`harness`]: Monte Carlo checks and synthetic workloads
//! * [`tensor`]: row-major matrices and the `QJLT` tensor file format

pub mod attention;
pub mod error;
pub mod harness;
pub mod kvcache;
pub mod qjl;
pub mod rng;
pub mod sketch;
pub mod tensor;

pub use attention::{error_metrics, exact_decode, quantized_decode, DecodeResult, ErrorMetrics, ScoreVector};
pub use error::{QjlError, Result};
pub use kvcache::{KeyCacheConfig, KeyCacheState, OutlierProfile, QuantizedValueToken};
pub use qjl::{estimate_inner_product, quantize, sketch_query, QuantizedKey, SketchedQuery};
pub use sketch::SketchMatrix;
pub use tensor::Matrix;
