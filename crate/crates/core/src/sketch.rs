//! Gaussian JL projection matrices and their row-orthogonalized variant.

use nalgebra::DMatrix;

use crate::error::{check_len, QjlError, Result};
use crate::rng::{rng_from_seed, standard_normal};
use crate::tensor::Matrix;

/// A dense `rows x cols` projection used by one quantizer instance.
///
/// Immutable once built, so it can be shared freely between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    seed: u64,
    orthogonalized: bool,
}

impl SketchMatrix {
    /// I.i.d. standard normal entries drawn row-major from the seeded stream.
    pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        check_dims(rows, cols)?;
        let mut rng = rng_from_seed(seed);
        let entries = (0..rows * cols).map(|_| standard_normal(&mut rng)).collect();
        Ok(Self {
            rows,
            cols,
            entries,
            seed,
            orthogonalized: false,
        })
    }

    /// Gaussian sketch, orthogonalized when `orthogonalize` is set.
    pub fn generate(rows: usize, cols: usize, seed: u64, orthogonalize: bool) -> Result<Self> {
        let s = Self::gaussian(rows, cols, seed)?;
        Ok(if orthogonalize { s.orthogonalize() } else { s })
    }

    /// Wraps explicit entries (row-major). Used for fixed test matrices and for
    /// matrices loaded from disk; the seed is recorded as 0.
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        check_dims(rows, cols)?;
        check_len(rows * cols, entries.len())?;
        Ok(Self {
            rows,
            cols,
            entries,
            seed: 0,
            orthogonalized: false,
        })
    }

    /// Orthogonalizes the rows with a QR factorization.
    ///
    /// Rows are processed in consecutive blocks of at most `cols` rows. Within
    /// a block the rows become mutually orthogonal (Gram-Schmidt order, i.e.
    /// Householder QR with the sign of `R`'s diagonal folded back into `Q`)
    /// and are rescaled to norm `sqrt(cols)`. Rows in different blocks come
    /// from independent Gaussian draws and are not orthogonal to each other.
    pub fn orthogonalize(self) -> Self {
        if self.orthogonalized {
            return self;
        }
        let d = self.cols;
        let target = (d as f64).sqrt();
        let mut entries = vec![0.0; self.entries.len()];
        for start in (0..self.rows).step_by(d) {
            let block = (self.rows - start).min(d);
            // columns of `a` are the block's rows
            let a = DMatrix::from_fn(d, block, |i, j| self.entries[(start + j) * d + i]);
            let qr = a.qr();
            let q = qr.q();
            let r = qr.r();
            for j in 0..block {
                let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
                let col = q.column(j);
                let norm = col.norm();
                let out = &mut entries[(start + j) * d..(start + j + 1) * d];
                for (o, &x) in out.iter_mut().zip(col.iter()) {
                    *o = sign * x * target / norm;
                }
            }
        }
        Self {
            entries,
            orthogonalized: true,
            ..self
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_orthogonalized(&self) -> bool {
        self.orthogonalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `S x` in full precision.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols, x.len())?;
        Ok(self.entries.chunks_exact(self.cols).map(|row| dot(row, x)).collect())
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::new(self.rows, self.cols, self.entries.clone()).expect("shape is consistent")
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        Self::from_entries(m.rows(), m.cols(), m.as_slice().to_vec())
    }
}

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(QjlError::InvalidDimension(format!(
            "sketch must be at least 1 x 1, got {rows} x {cols}"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
