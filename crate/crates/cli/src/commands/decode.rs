use std::fs::File;
use std::io::{BufReader, Write};

use qjl::attention::{error_metrics, exact_decode, quantized_decode, ErrorMetrics};
use qjl::kvcache::read_cache;
use qjl::tensor::{save_tensor, DType};
use qjl::Matrix;

use super::{check_cols, load, output};
use crate::args::DecodeArgs;
use crate::config::RunConfig;
use crate::error::{at_path, CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRow {
    pub query: usize,
    /// Present when exact keys and values were supplied.
    pub metrics: Option<ErrorMetrics>,
    pub output: Vec<f64>,
}

pub fn run(args: &DecodeArgs) -> Result<Vec<DecodeRow>> {
    let mut temperature = match &args.config {
        Some(path) => RunConfig::load(path)?.temperature,
        None => RunConfig::default().temperature,
    };
    if let Some(t) = args.temperature {
        temperature = t;
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(CliError::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }

    let file = File::open(&args.cache).map_err(|e| CliError::io(&args.cache, e))?;
    let (header, state, tokens) = read_cache(BufReader::new(file)).map_err(at_path(&args.cache))?;
    if state.is_empty() {
        return Err(CliError::Io(format!("{}: cache is empty", args.cache.display())));
    }
    let d = header.d as usize;
    let queries = load(&args.queries)?;
    check_cols("queries", &args.queries, &queries, d)?;

    let exact = match (&args.keys, &args.values) {
        (Some(kp), Some(vp)) => {
            let keys = load(kp)?;
            let values = load(vp)?;
            check_cols("keys", kp, &keys, d)?;
            check_cols("values", vp, &values, d)?;
            for (path, m) in [(kp, &keys), (vp, &values)] {
                if m.rows() != state.len() {
                    return Err(CliError::Io(format!(
                        "{}: {} tokens, cache holds {}",
                        path.display(),
                        m.rows(),
                        state.len()
                    )));
                }
            }
            Some((keys, values))
        }
        (None, None) => None,
        _ => {
            return Err(CliError::Config(
                "--keys and --values must be given together".into(),
            ))
        }
    };

    let mut rows = Vec::with_capacity(queries.rows());
    let mut scores = Vec::with_capacity(queries.rows() * state.len());
    for (i, q) in queries.iter_rows().enumerate() {
        let approx = quantized_decode(q, &state, &tokens, temperature)?;
        let metrics = match &exact {
            Some((keys, values)) => {
                let reference = exact_decode(q, keys, values, temperature)?;
                Some(error_metrics(&reference, &approx)?)
            }
            None => None,
        };
        scores.extend_from_slice(approx.scores.weights());
        rows.push(DecodeRow {
            query: i,
            metrics,
            output: approx.output,
        });
    }

    write_report(&mut output(args.out.as_deref())?, &rows, d, exact.is_some())?;
    if let Some(path) = &args.scores {
        let m = Matrix::new(queries.rows(), state.len(), scores)?;
        save_tensor(path, &m, DType::F64).map_err(at_path(path))?;
    }
    Ok(rows)
}

fn write_report(out: &mut dyn Write, rows: &[DecodeRow], d: usize, with_metrics: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["query".to_string()];
    if with_metrics {
        head.extend(["max_rel_score_err", "tv_distance", "rel_l2_output_err"].map(String::from));
    }
    head.extend((0..d).map(|j| format!("o{j}")));
    w.write_record(&head)?;
    for r in rows {
        let mut rec = vec![r.query.to_string()];
        if let Some(m) = &r.metrics {
            rec.extend([m.max_rel_score_err, m.tv_distance, m.rel_l2_output_err].map(|x| x.to_string()));
        }
        rec.extend(r.output.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("writing report: {e}")))?;
    Ok(())
}
