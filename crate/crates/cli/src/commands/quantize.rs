use std::fs::File;
use std::io::BufWriter;

use qjl::kvcache::{
    bits_per_fpn, detect_outliers, quantize_value, CacheHeader, CacheWriter, MemoryBudget,
    MemoryReport,
};
use qjl::{KeyCacheConfig, KeyCacheState};

use super::{check_cols, load};
use crate::args::QuantizeArgs;
use crate::error::{at_path, CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeOutput {
    pub header: CacheHeader,
    pub memory: MemoryReport,
}

/// Detects outlier channels on the prompt, then streams every key/value
/// token into the cache file.
pub fn run(args: &QuantizeArgs) -> Result<QuantizeOutput> {
    let config = args.config.resolve()?;
    let keys = load(&args.keys)?;
    let values = load(&args.values)?;
    check_cols("keys", &args.keys, &keys, config.d)?;
    check_cols("values", &args.values, &values, config.d)?;
    if keys.rows() != values.rows() {
        return Err(CliError::Io(format!(
            "{} keys but {} values",
            keys.rows(),
            values.rows()
        )));
    }
    if keys.rows() == 0 {
        return Err(CliError::Io(format!("{}: no tokens", args.keys.display())));
    }
    let prompt = args.prompt_tokens.unwrap_or(keys.rows()).min(keys.rows());
    if prompt == 0 {
        return Err(CliError::Config("--prompt-tokens must be >= 1".into()));
    }

    let profile = detect_outliers(&keys.head(prompt), config.outliers)?;
    let state = KeyCacheState::new(
        profile,
        &KeyCacheConfig {
            m_inlier: config.m_in,
            m_outlier: config.m_out,
            seed: config.seed,
            orthogonalize: config.orthogonalize,
        },
    )?;

    let file = File::create(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let mut writer =
        CacheWriter::new(BufWriter::new(file), &state, config.bits).map_err(at_path(&args.out))?;
    for (k, v) in keys.iter_rows().zip(values.iter_rows()) {
        let entry = state.quantize_key(k)?;
        let token = quantize_value(v, config.bits)?;
        writer.append(&entry, &token).map_err(at_path(&args.out))?;
    }
    let header = writer.header().clone();
    writer.finish().map_err(at_path(&args.out))?;

    let budget = MemoryBudget {
        value_bits: config.bits,
        ..MemoryBudget::default()
    };
    let memory = bits_per_fpn(state.dim(), state.m_inlier(), state.m_outlier(), &budget)?;
    println!(
        "wrote {}: n = {}, d = {}, h = {} {:?}, m_in = {}, m_out = {}, b = {}",
        args.out.display(),
        header.n,
        header.d,
        header.h,
        state.profile().outlier_channels(),
        header.m_inlier,
        header.m_outlier,
        header.value_bits
    );
    println!("{memory}");
    Ok(QuantizeOutput { header, memory })
}
