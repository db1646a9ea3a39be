//! One test per acceptance criterion. Each prints a single `[PASS]`/`[FAIL]`
//! line to stderr (bypassing output capture) and then asserts the verdict.
//! Tests take a shared lock so the timing criterion never shares the CPU.

use std::f64::consts::PI;
use std::io::Write;
use std::process::Command;
use std::sync::{Mutex, MutexGuard};

use qjl::harness::{
    generate_synthetic_stream, required_m, run_orthogonal_comparison, unit_vector, TrialConfig,
    VectorDistribution,
};
use qjl::kvcache::{bits_per_fpn, dequantize_value, detect_outliers, quantize_value, MemoryBudget};
use qjl::qjl::{pack_signs, SignBits};
use qjl::rng::{derive_seed, rng_from_seed};
use qjl::{estimate_inner_product, quantize, sketch_query, KeyCacheConfig, KeyCacheState};
use qjl::{OutlierProfile, SketchMatrix};
use qjl_cli::commands::bench::{measure, BenchPlan, DecodePath};
use qjl_cli::RunConfig;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    writeln!(err, "\n[{tag}] criterion {id:>2} {name}: {detail}").unwrap();
    err.flush().unwrap();
    assert!(passed, "criterion {id} ({name}) failed: {detail}");
}

fn info(id: u32, detail: &str) {
    writeln!(std::io::stderr().lock(), "\n       criterion {id:>2} info: {detail}").unwrap();
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn estimate(s: &SketchMatrix, q: &[f64], k: &[f64]) -> f64 {
    estimate_inner_product(&sketch_query(s, q).unwrap(), &quantize(s, k).unwrap()).unwrap()
}

/// Fraction of random unit pairs with `|est - <q,k>| > eps`.
fn tail_failure_fraction(d: usize, m: usize, eps: f64, draws: u64, orthogonal: bool) -> f64 {
    let mut failures = 0;
    for t in 0..draws {
        let mut rng = rng_from_seed(derive_seed(0xA11CE, t));
        let q = unit_vector(&mut rng, d);
        let k = unit_vector(&mut rng, d);
        let s = SketchMatrix::generate(m, d, derive_seed(0x5EED, t), orthogonal).unwrap();
        if (estimate(&s, &q, &k) - dot(&q, &k)).abs() > eps {
            failures += 1;
        }
    }
    failures as f64 / draws as f64
}

#[test]
fn criterion_01_estimator_is_unbiased() {
    let _g = serial();
    let (d, m, draws) = (64, 8, 100_000u64);
    let mut rng = rng_from_seed(101);
    let q = unit_vector(&mut rng, d);
    let k = unit_vector(&mut rng, d);
    let estimates: Vec<f64> = (0..draws)
        .map(|t| estimate(&SketchMatrix::gaussian(m, d, derive_seed(102, t)).unwrap(), &q, &k))
        .collect();
    let n = draws as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let stderr = (var / n).sqrt();
    let truth = dot(&q, &k);
    let z = (mean - truth) / stderr;
    verdict(
        1,
        "unbiasedness",
        z.abs() <= 4.0,
        &format!("d={d} m={m} draws={draws}: mean {mean:.6} vs <q,k> {truth:.6}, |z| = {:.2} (limit 4)", z.abs()),
    );
}

#[test]
fn criterion_02_tail_distortion_at_required_m() {
    let _g = serial();
    let (d, eps, delta, draws) = (128, 0.25, 0.01, 10_000u64);
    let m = (4.0 / 3.0 * (1.0 + eps) / (eps * eps) * (2.0f64 / delta).ln()).ceil() as usize;
    assert_eq!(m, 142);
    assert_eq!(required_m(eps, delta).unwrap(), m);
    let orthogonal = tail_failure_fraction(d, m, eps, draws, true);
    info(2, &format!("orthogonalized sketches at m={m}: failure fraction {orthogonal:.4}"));
    let fraction = tail_failure_fraction(d, m, eps, draws, false);
    verdict(
        2,
        "tail distortion",
        fraction <= delta,
        &format!("i.i.d. Gaussian d={d} m={m} eps={eps} draws={draws}: failure fraction {fraction:.4} (limit {delta})"),
    );
}

#[test]
fn criterion_03_score_distortion() {
    let _g = serial();
    let (d, n, eps, m, draws) = (128, 256, 0.2, 278, 100u64);
    assert_eq!((2.0 / (eps * eps) * (n as f64).ln()).ceil() as usize, m);
    let mut rng = rng_from_seed(303);
    let q = unit_vector(&mut rng, d);
    let keys: Vec<Vec<f64>> = (0..n).map(|_| unit_vector(&mut rng, d)).collect();
    let logits: Vec<f64> = keys.iter().map(|k| dot(&q, k)).collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
    let exact: Vec<f64> = logits.iter().map(|l| (l - top).exp() / z).collect();

    let mut worst = Vec::new();
    for t in 0..draws {
        let config = KeyCacheConfig {
            m_inlier: m,
            m_outlier: 0,
            seed: derive_seed(304, t),
            orthogonalize: false,
        };
        let mut cache = KeyCacheState::new(OutlierProfile::none(d), &config).unwrap();
        for k in &keys {
            cache.append_key(k).unwrap();
        }
        let approx = cache.estimate_scores(&q, None).unwrap();
        let e = exact
            .iter()
            .zip(approx.weights())
            .map(|(s, a)| (a - s).abs() / s)
            .fold(0.0, f64::max);
        worst.push(e);
    }
    let within = worst.iter().filter(|&&e| e <= 3.0 * eps).count();
    let max = worst.iter().cloned().fold(0.0, f64::max);
    verdict(
        3,
        "score distortion",
        within >= 99,
        &format!("d={d} n={n} m={m}: {within}/{draws} draws with max relative score error <= 0.6 (need 99), worst {max:.3}"),
    );
}

#[test]
fn criterion_04_packed_kernel_matches_naive() {
    let _g = serial();
    let mut worst = 0.0f64;
    for case in 0..1000u64 {
        let m = 1 + (derive_seed(404, case) % 512) as usize;
        let mut rng = rng_from_seed(derive_seed(405, case));
        let sq = unit_vector(&mut rng, m);
        let sk = unit_vector(&mut rng, m);
        let signs: Vec<i8> = sk.iter().map(|&x| if x >= 0.0 { 1 } else { -1 }).collect();
        let naive: f64 = signs.iter().zip(&sq).map(|(&s, &v)| s as f64 * v).sum();
        let abs_sum: f64 = sq.iter().map(|v| v.abs()).sum();

        let packed: SignBits = pack_signs(&signs).unwrap();
        assert_eq!(packed, SignBits::from_signs_of(&sk));
        let fast = packed.signed_sum(&sq);
        worst = worst.max((fast - naive).abs() / abs_sum);

        let key_norm = 1.0 + case as f64;
        let key = qjl::QuantizedKey::new(packed, key_norm).unwrap();
        let est = estimate_inner_product(&qjl::SketchedQuery::from_values(sq.clone(), m), &key).unwrap();
        let reference = (PI / 2.0).sqrt() / m as f64 * key_norm * naive;
        let scale = (PI / 2.0).sqrt() / m as f64 * key_norm * abs_sum;
        worst = worst.max((est - reference).abs() / scale);
    }
    verdict(
        4,
        "packed kernel",
        worst <= 1e-5,
        &format!("1000 cases, m in 1..=512: worst relative error {worst:.2e} (limit 1e-5)"),
    );
}

#[test]
fn criterion_05_value_quantizer_round_trip() {
    let _g = serial();
    let mut worst = 0.0f64;
    let mut constant_exact = true;
    for bits in [2u8, 3, 4, 8] {
        for t in 0..1000u64 {
            let mut rng = rng_from_seed(derive_seed(500 + bits as u64, t));
            let spread = 10f64.powi((t % 9) as i32 - 4);
            let shift = (t % 5) as f64 - 2.0;
            let v: Vec<f64> = unit_vector(&mut rng, 64).iter().map(|x| shift + spread * x).collect();
            let token = quantize_value(&v, bits).unwrap();
            let back = dequantize_value(&token);
            let max_abs = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let ulp = f64::EPSILON * max_abs;
            for (x, y) in v.iter().zip(&back) {
                worst = worst.max((x - y).abs() / (token.scale() / 2.0 + ulp));
            }
        }
        for c in [0.0, -3.5, 1e-300, 7e12] {
            constant_exact &= dequantize_value(&quantize_value(&[c; 16], bits).unwrap()) == [c; 16];
        }
    }
    verdict(
        5,
        "value quantizer",
        worst <= 1.0 && constant_exact,
        &format!(
            "b in {{2,3,4,8}} x 1000 tokens: worst error / (scale/2 + ulp) = {worst:.4} (limit 1), constant tokens exact: {constant_exact}"
        ),
    );
}

#[test]
fn criterion_06_memory_accounting() {
    let _g = serial();
    let budget = MemoryBudget {
        value_bits: 3,
        norm_bits: 16,
        zero_scale_bits: 32,
    };
    let r = bits_per_fpn(128, 368, 0, &budget).unwrap();
    let key = (368.0 + 2.0 * 16.0) / 128.0;
    let value = 3.0 + 32.0 / 128.0;
    let reduction = 16.0 / ((key + value) / 2.0);
    let passed = r.key_bits_per_fpn == 3.125
        && r.value_bits_per_fpn == 3.25
        && key == 3.125
        && value == 3.25
        && (r.reduction - reduction).abs() < 1e-12
        && r.reduction > 5.0;
    verdict(
        6,
        "memory accounting",
        passed,
        &format!(
            "d=128 m_in=368 b=3: key {} value {} bits/FPN, {:.3}x reduction vs 16-bit",
            r.key_bits_per_fpn, r.value_bits_per_fpn, r.reduction
        ),
    );
}

#[test]
fn criterion_07_outlier_recovery() {
    let _g = serial();
    let dist = VectorDistribution::PlantedOutliers { factor: 10.0 };
    let mut recovered = 0;
    for seed in 0..100 {
        let stream = generate_synthetic_stream(128, 256, 1, dist, seed).unwrap();
        let profile = detect_outliers(&stream.keys, 4).unwrap();
        let mut found = profile.outlier_channels().to_vec();
        let mut planted = stream.planted.clone();
        found.sort_unstable();
        planted.sort_unstable();
        if planted.len() == 4 && found == planted {
            recovered += 1;
        }
    }
    verdict(
        7,
        "outlier recovery",
        recovered == 100,
        &format!("4 channels x factor 10, d=128, 256 tokens: exact set recovered in {recovered}/100 seeds"),
    );
}

#[test]
fn criterion_08_orthogonalization_variance() {
    let _g = serial();
    let cfg = TrialConfig {
        d: 64,
        m: 32,
        n: 1,
        epsilon: 0.25,
        delta: 0.01,
        trials: 10_000,
        seed: 808,
        distribution: VectorDistribution::Sphere,
        orthogonalize: true,
    };
    let r = run_orthogonal_comparison(&cfg).unwrap();
    let (iid, orth) = (r.variance_iid.unwrap(), r.variance_orthogonal.unwrap());
    let ratio = orth / iid;
    assert!((ratio - r.variance_ratio.unwrap()).abs() < 1e-12);
    verdict(
        8,
        "orthogonalization",
        ratio <= 1.05,
        &format!("d=64 m=32, 10000 paired seeds: variance orthogonal {orth:.5} / i.i.d. {iid:.5} = {ratio:.4} (limit 1.05)"),
    );
}

#[test]
fn criterion_09_negative_control() {
    let _g = serial();
    let half = required_m(0.25, 0.01).unwrap() / 2;
    let out = Command::new(env!("CARGO_BIN_EXE_qjl"))
        .env_remove("QJL_SEED")
        .args(["validate", "--only", "distortion", "--m-in", &half.to_string()])
        .output()
        .unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    let code = out.status.code();
    let mut rows = csv::Reader::from_reader(out.stdout.as_slice());
    let head = rows.headers().unwrap().clone();
    let col = head.iter().position(|h| h == "failure_fraction").unwrap();
    let fraction: f64 = rows.records().next().unwrap().unwrap()[col].parse().unwrap();
    let passed = code.is_some_and(|c| c != 0) && fraction > 0.01 && stderr.contains("FAIL distortion");
    verdict(
        9,
        "negative control",
        passed,
        &format!("validate --m-in {half}: exit {code:?}, failure fraction {fraction:.4} (limit 0.01)"),
    );
}

#[test]
fn criterion_10_exact_decode_is_linear_in_n() {
    let _g = serial();
    let config = RunConfig::default();
    let plan = BenchPlan {
        lengths: vec![1024, 4096, 16384, 65536],
        reps: 7,
        queries: 4,
        evict_bytes: Some(256 << 20),
    };
    let slope = |rows: &[qjl_cli::commands::bench::BenchRow], path| {
        rows.iter().find(|r| r.path == path).and_then(|r| r.slope).unwrap()
    };
    let warm = measure(&config, &BenchPlan { evict_bytes: None, ..plan.clone() }).unwrap();
    info(
        10,
        &format!(
            "warm cache: exact slope {:.3}, quantized slope {:.3}",
            slope(&warm, DecodePath::Exact),
            slope(&warm, DecodePath::Quantized)
        ),
    );
    let cold = measure(&config, &plan).unwrap();
    let exact = slope(&cold, DecodePath::Exact);
    info(10, &format!("cold cache: quantized slope {:.3}", slope(&cold, DecodePath::Quantized)));
    verdict(
        10,
        "decode complexity",
        (0.8..=1.2).contains(&exact),
        &format!("d=128, n in {{1k,4k,16k,64k}}, cold cache: exact decode log-log slope {exact:.3} (range [0.8, 1.2])"),
    );
}
