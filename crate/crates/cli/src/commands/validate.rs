use std::io::Write;

use qjl::harness::{run_validation, Suite, TrialReport, ValidationSettings};

use super::output;
use crate::args::ValidateArgs;
use crate::error::{CliError, Result};

pub fn settings(args: &ValidateArgs) -> Result<ValidationSettings> {
    let mut config = args.config.resolve()?;
    if let Some(n) = args.n {
        config.n = n;
        config.validate()?;
    }
    let mut s = ValidationSettings {
        d: config.d,
        n: config.n,
        epsilon: config.epsilon,
        delta: config.delta,
        score_epsilon: config.score_epsilon,
        m_override: args.config.m_in,
        seed: config.seed,
        orthogonalize: config.orthogonalize,
        distribution: args.dist.with_factor(args.factor),
        ..ValidationSettings::default()
    };
    if let Some(t) = args.trials {
        s.unbiasedness_trials = t;
        s.distortion_trials = t;
        s.score_draws = t;
        s.orthogonal_trials = t;
    }
    Ok(s)
}

pub fn parse_suites(names: &[String]) -> Result<Vec<Suite>> {
    names
        .iter()
        .map(|n| {
            Suite::parse(n.trim()).ok_or_else(|| {
                let known: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
                CliError::Config(format!("unknown suite {n:?}; expected one of {}", known.join(", ")))
            })
        })
        .collect()
}

/// Runs the suites and writes the report; fails with an assertion error
/// after writing if any suite failed.
pub fn run(args: &ValidateArgs) -> Result<Vec<TrialReport>> {
    let settings = settings(args)?;
    let only = parse_suites(&args.only)?;
    let reports = run_validation(&settings, &only)?;

    let mut out = output(args.out.as_deref())?;
    let json = args
        .out
        .as_ref()
        .is_some_and(|p| p.extension().is_some_and(|e| e == "json"));
    if json {
        serde_json::to_writer_pretty(&mut out, &reports)
            .map_err(|e| CliError::Io(format!("writing report: {e}")))?;
        writeln!(out).map_err(|e| CliError::Io(format!("writing report: {e}")))?;
    } else {
        let mut w = csv::Writer::from_writer(&mut out);
        for r in &reports {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| CliError::Io(format!("writing report: {e}")))?;
    }
    out.flush().map_err(|e| CliError::Io(format!("writing report: {e}")))?;

    for r in &reports {
        eprintln!("{}", summary(r));
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.suite.name()).collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(CliError::Assertion(format!("failed suites: {}", failed.join(", "))))
    }
}

fn summary(r: &TrialReport) -> String {
    let verdict = if r.passed { "pass" } else { "FAIL" };
    let detail = match r.suite {
        Suite::Unbiasedness => format!(
            "mean {:.5} vs {:.5}, z = {:.2}",
            r.mean_estimate.unwrap_or(f64::NAN),
            r.truth.unwrap_or(f64::NAN),
            r.z_score.unwrap_or(f64::NAN)
        ),
        Suite::Distortion => format!(
            "failure fraction {:.4} (limit {})",
            r.failure_fraction.unwrap_or(f64::NAN),
            r.delta
        ),
        Suite::Scores => format!(
            "{:.1}% of draws within {:.2}, worst {:.3}",
            100.0 * r.pass_fraction.unwrap_or(f64::NAN),
            r.threshold.unwrap_or(f64::NAN),
            r.score_err_max.unwrap_or(f64::NAN)
        ),
        Suite::Orthogonal => format!(
            "variance ratio {:.4}",
            r.variance_ratio.unwrap_or(f64::NAN)
        ),
    };
    format!("{verdict} {:<12} m = {:<4} {detail}", r.suite.name(), r.m)
}
