use qjl::attention::{error_metrics, exact_decode, quantized_decode, softmax};
use qjl::harness::{
    generate_synthetic_stream, required_m_scores, run_score_trial, run_score_trial_with,
    TrialConfig, VectorDistribution,
};
use qjl::kvcache::quantize_value;
use qjl::rng::derive_seed;
use qjl::{KeyCacheConfig, KeyCacheState, Matrix, OutlierProfile, QuantizedValueToken};

fn score_config(d: usize, m: usize, n: usize, epsilon: f64, seed: u64) -> TrialConfig {
    TrialConfig {
        d,
        m,
        n,
        epsilon,
        delta: 0.01,
        trials: 100,
        seed,
        distribution: VectorDistribution::Sphere,
        orthogonalize: false,
    }
}

fn build(
    keys: &Matrix,
    values: &Matrix,
    m: usize,
    bits: u8,
    seed: u64,
    orthogonalize: bool,
) -> (KeyCacheState, Vec<QuantizedValueToken>) {
    let config = KeyCacheConfig {
        m_inlier: m,
        m_outlier: 0,
        seed,
        orthogonalize,
    };
    let mut state = KeyCacheState::new(OutlierProfile::none(keys.cols()), &config).unwrap();
    let mut tokens = Vec::new();
    for (k, v) in keys.iter_rows().zip(values.iter_rows()) {
        state.append_key(k).unwrap();
        tokens.push(quantize_value(v, bits).unwrap());
    }
    (state, tokens)
}

#[test]
fn score_bound_at_required_size() {
    let m = required_m_scores(0.2, 1.0, 256).unwrap();
    assert_eq!(m, 278);
    let r = run_score_trial(&score_config(128, m, 256, 0.2, 5)).unwrap();
    assert!((r.threshold.unwrap() - 0.6).abs() < 1e-12);
    assert!(r.passed, "pass fraction {:?}, max {:?}", r.pass_fraction, r.score_err_max);
}

#[test]
fn looser_score_bound_at_its_size() {
    let m = required_m_scores(0.5, 1.0, 256).unwrap();
    assert_eq!(m, 45);
    let r = run_score_trial(&score_config(64, m, 256, 0.5, 6)).unwrap();
    assert!(r.passed, "pass fraction {:?}, max {:?}", r.pass_fraction, r.score_err_max);
}

#[test]
fn identical_pair_of_keys_has_no_score_error() {
    let keys = Matrix::from_rows(&[[0.6, 0.8, 0.0], [0.6, 0.8, 0.0]]).unwrap();
    let r = run_score_trial_with(&score_config(3, 20, 2, 0.2, 7), &keys, &[0.0, 0.0, 1.0]).unwrap();
    assert_eq!(r.score_err_max, Some(0.0));
    assert_eq!(r.pass_fraction, Some(1.0));
}

#[test]
fn large_sketch_decode_is_close_to_exact() {
    let stream = generate_synthetic_stream(64, 256, 5, VectorDistribution::Sphere, 9).unwrap();
    let (state, tokens) = build(&stream.keys, &stream.values, 4096, 8, 10, true);
    for q in stream.queries.iter_rows() {
        let exact = exact_decode(q, &stream.keys, &stream.values, 1.0).unwrap();
        let approx = quantized_decode(q, &state, &tokens, 1.0).unwrap();
        let m = error_metrics(&exact, &approx).unwrap();
        assert!(m.rel_l2_output_err <= 0.02, "relative L2 error {}", m.rel_l2_output_err);
    }
}

#[test]
fn decode_error_shrinks_with_sketch_size() {
    let sizes = [64, 256, 1024, 4096];
    let medians: Vec<f64> = sizes
        .iter()
        .map(|&m| {
            let mut errs: Vec<f64> = (0..20u64)
                .map(|seed| {
                    let stream =
                        generate_synthetic_stream(64, 128, 1, VectorDistribution::Sphere, seed)
                            .unwrap();
                    let (state, tokens) =
                        build(&stream.keys, &stream.values, m, 8, derive_seed(seed, 1), false);
                    let q = stream.queries.row(0);
                    let exact = exact_decode(q, &stream.keys, &stream.values, 1.0).unwrap();
                    let approx = quantized_decode(q, &state, &tokens, 1.0).unwrap();
                    error_metrics(&exact, &approx).unwrap().rel_l2_output_err
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            (errs[9] + errs[10]) / 2.0
        })
        .collect();
    for w in medians.windows(2) {
        assert!(w[1] < w[0], "median errors {medians:?} for m = {sizes:?}");
    }
}

#[test]
fn softmax_is_shift_invariant() {
    let logits = [0.3, -1.2, 4.0, 2.5, 0.0];
    let base = softmax(&logits, 1.0).unwrap();
    for shift in [-50.0, -1.0, 3.0, 700.0] {
        let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
        let s = softmax(&shifted, 1.0).unwrap();
        for (a, b) in s.weights().iter().zip(base.weights()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn exact_decode_ignores_key_shift_along_the_query() {
    // Adding c * q / |q|^2 to every key adds c to every logit.
    let stream = generate_synthetic_stream(16, 30, 1, VectorDistribution::Gaussian, 12).unwrap();
    let q = stream.queries.row(0);
    let qq: f64 = q.iter().map(|x| x * x).sum();
    let mut shifted = stream.keys.clone();
    for i in 0..shifted.rows() {
        shifted.row_mut(i).iter_mut().zip(q).for_each(|(k, x)| *k += 3.0 * x / qq);
    }
    let a = exact_decode(q, &stream.keys, &stream.values, 1.0).unwrap();
    let b = exact_decode(q, &shifted, &stream.values, 1.0).unwrap();
    for (x, y) in a.output.iter().zip(&b.output) {
        assert!((x - y).abs() <= 1e-9);
    }
}

#[test]
fn single_token_decodes_to_its_value() {
    let keys = Matrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap();
    let values = Matrix::from_rows(&[[0.1, 0.7, -0.4]]).unwrap();
    let (state, tokens) = build(&keys, &values, 32, 3, 1, false);
    let approx = quantized_decode(&[0.2, 0.2, 0.2], &state, &tokens, 1.0).unwrap();
    assert_eq!(approx.scores.weights(), &[1.0]);
    assert_eq!(approx.output, tokens[0].dequantize());
    let exact = exact_decode(&[0.2, 0.2, 0.2], &keys, &values, 1.0).unwrap();
    assert_eq!(exact.output, values.row(0));
}

#[test]
fn scores_are_positive_in_both_paths() {
    let stream = generate_synthetic_stream(32, 64, 4, VectorDistribution::Gaussian, 13).unwrap();
    let (state, tokens) = build(&stream.keys, &stream.values, 64, 3, 14, true);
    for q in stream.queries.iter_rows() {
        for r in [
            exact_decode(q, &stream.keys, &stream.values, 8.0).unwrap(),
            quantized_decode(q, &state, &tokens, 8.0).unwrap(),
        ] {
            assert!(r.scores.weights().iter().all(|&w| w > 0.0));
            assert!((r.scores.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }
}
