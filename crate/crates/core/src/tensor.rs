//! Dense row-major matrices and the `QJLT` tensor file format.
//!
//! Layout (little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `QJLT`                            |
//! | 4      | 2    | version (`1`)                           |
//! | 6      | 2    | dtype (1 = f32, 2 = f64, 3 = f16)       |
//! | 8      | 8    | rows                                    |
//! | 16     | 8    | cols                                    |
//! | 24     | ...  | `rows * cols` elements, row-major       |
//!
//! Readers reject unknown versions and payloads whose length differs from
//! `rows * cols * dtype_size`. Values are widened to `f64` on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use half::f16;

use crate::error::{QjlError, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"QJLT";
pub const TENSOR_VERSION: u16 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    F16 = 3,
}

impl DType {
    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(code: u16) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            3 => Ok(DType::F16),
            other => Err(QjlError::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::F16 => 2,
        }
    }
}

/// Row-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| QjlError::InvalidDimension(format!("{rows} x {cols} overflows")))?;
        if data.len() != expected {
            return Err(QjlError::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(QjlError::DimensionMismatch {
                    expected: cols,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// First `n` rows as a new matrix.
    pub fn head(&self, n: usize) -> Matrix {
        let n = n.min(self.rows);
        Matrix {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }
}

pub fn write_tensor<W: Write>(mut w: W, m: &Matrix, dtype: DType) -> Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(&TENSOR_MAGIC);
    header[4..6].copy_from_slice(&TENSOR_VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&dtype.code().to_le_bytes());
    header[8..16].copy_from_slice(&(m.rows as u64).to_le_bytes());
    header[16..24].copy_from_slice(&(m.cols as u64).to_le_bytes());
    w.write_all(&header)?;

    let mut payload = Vec::with_capacity(m.data.len() * dtype.size());
    match dtype {
        DType::F32 => m
            .data
            .iter()
            .for_each(|&x| payload.extend_from_slice(&(x as f32).to_le_bytes())),
        DType::F64 => m
            .data
            .iter()
            .for_each(|&x| payload.extend_from_slice(&x.to_le_bytes())),
        DType::F16 => m
            .data
            .iter()
            .for_each(|&x| payload.extend_from_slice(&f16::from_f64(x).to_le_bytes())),
    }
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

/// Reads a whole tensor; trailing bytes after the payload are an error.
pub fn read_tensor<R: Read>(mut r: R) -> Result<(Matrix, DType)> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|e| QjlError::Format(format!("truncated tensor header: {e}")))?;
    if header[0..4] != TENSOR_MAGIC {
        return Err(QjlError::Format("bad tensor magic, expected QJLT".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != TENSOR_VERSION {
        return Err(QjlError::Format(format!(
            "unsupported tensor version {version} (reader supports {TENSOR_VERSION})"
        )));
    }
    let dtype = DType::from_code(u16::from_le_bytes([header[6], header[7]]))?;
    let rows = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(header[16..24].try_into().unwrap());
    let count = rows
        .checked_mul(cols)
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| QjlError::Format(format!("tensor shape {rows} x {cols} too large")))?;
    let expected_bytes = count
        .checked_mul(dtype.size())
        .ok_or_else(|| QjlError::Format("tensor payload too large".into()))?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected_bytes {
        return Err(QjlError::Format(format!(
            "tensor payload is {} bytes, header implies {expected_bytes}",
            payload.len()
        )));
    }

    let data: Vec<f64> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::F16 => payload
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f64())
            .collect(),
    };
    Ok((Matrix::new(rows as usize, cols as usize, data)?, dtype))
}

pub fn save_tensor<P: AsRef<Path>>(path: P, m: &Matrix, dtype: DType) -> Result<()> {
    let file = File::create(path)?;
    write_tensor(BufWriter::new(file), m, dtype)
}

pub fn load_tensor<P: AsRef<Path>>(path: P) -> Result<Matrix> {
    let file = File::open(path)?;
    Ok(read_tensor(BufReader::new(file))?.0)
}
