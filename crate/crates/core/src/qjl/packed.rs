//! Packed sign storage.
//!
//! Signs live in contiguous `u64` words, LSB-first: bit `j` of word `w` is
//! sign index `64 * w + j`, with 1 meaning `+1` and 0 meaning `-1`. Bits past
//! `len` in the final word are always zero. On disk each word is written
//! little-endian.

use crate::error::{QjlError, Result};

pub const WORD_BITS: usize = 64;

pub fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SignBits {
    words: Vec<u64>,
    len: usize,
}

impl SignBits {
    /// Packs the signs of `values`; `x >= 0` maps to a set bit.
    pub fn from_signs_of(values: &[f64]) -> Self {
        let mut words = vec![0u64; words_for(values.len())];
        for (i, &v) in values.iter().enumerate() {
            if v >= 0.0 {
                words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
        }
        Self {
            words,
            len: values.len(),
        }
    }

    /// Adopts raw words, rejecting a word count that does not match `len` or
    /// non-zero padding.
    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        if words.len() != words_for(len) {
            return Err(QjlError::InvalidArgument(format!(
                "{} words cannot hold exactly {len} bits",
                words.len()
            )));
        }
        let tail = len % WORD_BITS;
        if tail != 0 && words[words.len() - 1] >> tail != 0 {
            return Err(QjlError::InvalidArgument(
                "padding bits in final word must be zero".into(),
            ));
        }
        Ok(Self { words, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// `sum_i values[i] * (+1 | -1)`.
    ///
    /// Set and clear bits are accumulated separately and subtracted once, so
    /// flipping every bit negates the result exactly.
    #[inline]
    pub fn signed_sum(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len);
        let mut plus = 0.0f64;
        let mut minus = 0.0f64;
        let last = self.words.len().saturating_sub(1);
        for (w, &word) in self.words.iter().enumerate() {
            let base = w * WORD_BITS;
            let valid = if w == last && self.len % WORD_BITS != 0 {
                (1u64 << (self.len % WORD_BITS)) - 1
            } else {
                u64::MAX
            };
            let mut set = word;
            while set != 0 {
                plus += values[base + set.trailing_zeros() as usize];
                set &= set - 1;
            }
            let mut clear = !word & valid;
            while clear != 0 {
                minus += values[base + clear.trailing_zeros() as usize];
                clear &= clear - 1;
            }
        }
        plus - minus
    }
}

/// Packs a `+1/-1` vector. Any entry other than `+1` or `-1` is rejected.
pub fn pack_signs(signs: &[i8]) -> Result<SignBits> {
    let mut words = vec![0u64; words_for(signs.len())];
    for (i, &s) in signs.iter().enumerate() {
        match s {
            1 => words[i / WORD_BITS] |= 1 << (i % WORD_BITS),
            -1 => {}
            other => {
                return Err(QjlError::InvalidArgument(format!(
                    "sign at index {i} is {other}, expected +1 or -1"
                )))
            }
        }
    }
    Ok(SignBits {
        words,
        len: signs.len(),
    })
}

/// Expands packed bits back into `m` signs.
pub fn unpack_signs(bits: &SignBits, m: usize) -> Result<Vec<i8>> {
    if bits.len() != m {
        return Err(QjlError::DimensionMismatch {
            expected: m,
            actual: bits.len(),
        });
    }
    Ok((0..m).map(|i| if bits.get(i) { 1 } else { -1 }).collect())
}
