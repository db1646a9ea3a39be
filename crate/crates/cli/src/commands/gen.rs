use std::fs;
use std::path::PathBuf;

use qjl::harness::generate_synthetic_stream;
use qjl::tensor::save_tensor;

use crate::args::GenArgs;
use crate::config::env_seed_or;
use crate::error::{at_path, CliError, Result};

pub const KEYS_FILE: &str = "keys.qjlt";
pub const VALUES_FILE: &str = "values.qjlt";
pub const QUERIES_FILE: &str = "queries.qjlt";

#[derive(Debug, Clone, PartialEq)]
pub struct GenOutput {
    pub keys: PathBuf,
    pub values: PathBuf,
    pub queries: PathBuf,
    pub seed: u64,
    pub planted: Vec<usize>,
}

pub fn run(args: &GenArgs) -> Result<GenOutput> {
    let seed = env_seed_or(args.seed)?;
    if !(args.factor > 0.0 && args.factor.is_finite()) {
        return Err(CliError::Config(format!(
            "--factor must be positive, got {}",
            args.factor
        )));
    }
    let stream =
        generate_synthetic_stream(args.d, args.n, args.num_queries, args.dist.with_factor(args.factor), seed)?;

    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let out = GenOutput {
        keys: args.out.join(KEYS_FILE),
        values: args.out.join(VALUES_FILE),
        queries: args.out.join(QUERIES_FILE),
        seed,
        planted: stream.planted.clone(),
    };
    for (path, m) in [
        (&out.keys, &stream.keys),
        (&out.values, &stream.values),
        (&out.queries, &stream.queries),
    ] {
        save_tensor(path, m, args.dtype.into()).map_err(at_path(path))?;
        println!("wrote {} ({} x {})", path.display(), m.rows(), m.cols());
    }
    if !out.planted.is_empty() {
        println!("planted outlier channels: {:?}", out.planted);
    }
    Ok(out)
}
