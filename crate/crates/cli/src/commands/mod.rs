pub mod bench;
pub mod decode;
pub mod gen;
pub mod quantize;
pub mod validate;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use qjl::tensor::load_tensor;
use qjl::Matrix;

use crate::error::{at_path, CliError, Result};

/// Buffered writer for `path`, or stdout.
pub(crate) fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

pub(crate) fn load(path: &Path) -> Result<Matrix> {
    load_tensor(path).map_err(at_path(path))
}

pub(crate) fn check_cols(what: &str, path: &Path, m: &Matrix, d: usize) -> Result<()> {
    if m.cols() != d {
        return Err(CliError::Io(format!(
            "{}: {what} have dimension {}, expected {d}",
            path.display(),
            m.cols()
        )));
    }
    Ok(())
}
