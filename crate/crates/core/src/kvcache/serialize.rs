//! `QJLC` cache files.
//!
//! All integers little-endian.
//!
//! ```text
//! header (64 bytes)
//!   0  [u8; 4]  magic "QJLC"
//!   4  u16      version (1)
//!   6  u16      flags, bit 0 = orthogonalized sketches
//!   8  u32      d
//!  12  u32      h, number of outlier channels
//!  16  u32      m_in  (0 when h = d)
//!  20  u32      m_out (0 when h = 0)
//!  24  u64      n, number of entries
//!  32  u8       b, value code width
//!  33  [u8; 7]  reserved, zero
//!  40  u64      master seed
//!  48  u64      inlier sketch seed
//!  56  u64      outlier sketch seed
//! profile
//!      h x u32  outlier channels, ascending
//!      d x f32  mean |key| per channel over the prompt
//! entries, in append order
//!      ceil(m_in / 64) x u64   inlier sign words
//!      u16                     inlier key norm (IEEE half)
//!      ceil(m_out / 64) x u64  outlier sign words
//!      u16                     outlier key norm (IEEE half)
//!      u16, u16                value zero point, value scale (IEEE half)
//!      ceil(d * b / 8) bytes   value codes, b bits each, LSB-first
//! ```
//!
//! Sketches are not stored; readers regenerate them from the seeds. Norms and
//! value constants are rounded to half precision on write.

use std::io::{Read, Seek, SeekFrom, Write};

use half::f16;

use super::outlier::OutlierProfile;
use super::value::QuantizedValueToken;
use super::{KeyCacheState, KeyEntry};
use crate::error::{QjlError, Result};
use crate::qjl::packed::{words_for, SignBits};
use crate::qjl::QuantizedKey;

pub const CACHE_MAGIC: [u8; 4] = *b"QJLC";
pub const CACHE_VERSION: u16 = 1;
const HEADER_LEN: usize = 64;
const N_OFFSET: u64 = 24;
const FLAG_ORTHOGONALIZED: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheHeader {
    pub version: u16,
    pub orthogonalized: bool,
    pub d: u32,
    pub h: u32,
    pub m_inlier: u32,
    pub m_outlier: u32,
    pub n: u64,
    pub value_bits: u8,
    pub master_seed: u64,
    pub inlier_seed: u64,
    pub outlier_seed: u64,
}

impl CacheHeader {
    fn for_state(state: &KeyCacheState, value_bits: u8) -> Result<Self> {
        let to_u32 = |x: usize, what: &str| {
            u32::try_from(x).map_err(|_| QjlError::Format(format!("{what} {x} exceeds u32")))
        };
        Ok(Self {
            version: CACHE_VERSION,
            orthogonalized: state.is_orthogonalized(),
            d: to_u32(state.dim(), "d")?,
            h: to_u32(state.profile().outlier_count(), "h")?,
            m_inlier: to_u32(state.m_inlier(), "m_in")?,
            m_outlier: to_u32(state.m_outlier(), "m_out")?,
            n: 0,
            value_bits,
            master_seed: state.master_seed(),
            inlier_seed: state.inlier_sketch().map_or(0, |s| s.seed()),
            outlier_seed: state.outlier_sketch().map_or(0, |s| s.seed()),
        })
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&CACHE_MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        let flags = if self.orthogonalized { FLAG_ORTHOGONALIZED } else { 0 };
        b[6..8].copy_from_slice(&flags.to_le_bytes());
        b[8..12].copy_from_slice(&self.d.to_le_bytes());
        b[12..16].copy_from_slice(&self.h.to_le_bytes());
        b[16..20].copy_from_slice(&self.m_inlier.to_le_bytes());
        b[20..24].copy_from_slice(&self.m_outlier.to_le_bytes());
        b[24..32].copy_from_slice(&self.n.to_le_bytes());
        b[32] = self.value_bits;
        b[40..48].copy_from_slice(&self.master_seed.to_le_bytes());
        b[48..56].copy_from_slice(&self.inlier_seed.to_le_bytes());
        b[56..64].copy_from_slice(&self.outlier_seed.to_le_bytes());
        b
    }

    fn decode(b: &[u8; HEADER_LEN]) -> Result<Self> {
        if b[0..4] != CACHE_MAGIC {
            return Err(QjlError::Format("bad cache magic, expected QJLC".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
        let version = u16_at(4);
        if version != CACHE_VERSION {
            return Err(QjlError::Format(format!(
                "unsupported cache version {version} (reader supports {CACHE_VERSION})"
            )));
        }
        let flags = u16_at(6);
        if flags & !FLAG_ORTHOGONALIZED != 0 {
            return Err(QjlError::Format(format!("unknown cache flags {flags:#x}")));
        }
        Ok(Self {
            version,
            orthogonalized: flags & FLAG_ORTHOGONALIZED != 0,
            d: u32_at(8),
            h: u32_at(12),
            m_inlier: u32_at(16),
            m_outlier: u32_at(20),
            n: u64_at(24),
            value_bits: b[32],
            master_seed: u64_at(40),
            inlier_seed: u64_at(48),
            outlier_seed: u64_at(56),
        })
    }
}

fn half_bits(x: f64, what: &str) -> Result<[u8; 2]> {
    let h = f16::from_f64(x);
    if !h.is_finite() {
        return Err(QjlError::Format(format!(
            "{what} {x} does not fit in half precision"
        )));
    }
    Ok(h.to_le_bytes())
}

fn code_bytes(d: usize, bits: u8) -> usize {
    (d * bits as usize).div_ceil(8)
}

fn pack_codes(codes: &[u8], bits: u8, out: &mut Vec<u8>) {
    let start = out.len();
    out.resize(start + code_bytes(codes.len(), bits), 0);
    let buf = &mut out[start..];
    for (i, &c) in codes.iter().enumerate() {
        for j in 0..bits as usize {
            if c >> j & 1 == 1 {
                let pos = i * bits as usize + j;
                buf[pos / 8] |= 1 << (pos % 8);
            }
        }
    }
}

fn unpack_codes(buf: &[u8], d: usize, bits: u8) -> Vec<u8> {
    (0..d)
        .map(|i| {
            (0..bits as usize).fold(0u8, |acc, j| {
                let pos = i * bits as usize + j;
                acc | ((buf[pos / 8] >> (pos % 8)) & 1) << j
            })
        })
        .collect()
}

/// Streams entries into a cache file. The entry count in the header is
/// patched by [`CacheWriter::finish`].
pub struct CacheWriter<W: Write + Seek> {
    inner: W,
    header: CacheHeader,
    start: u64,
    buf: Vec<u8>,
}

impl<W: Write + Seek> CacheWriter<W> {
    /// Writes the header and profile of `state`. Entries already in `state`
    /// are not written; pass them to [`CacheWriter::append`].
    pub fn new(mut inner: W, state: &KeyCacheState, value_bits: u8) -> Result<Self> {
        if !(1..=8).contains(&value_bits) {
            return Err(QjlError::InvalidArgument(format!(
                "value bit width must be in 1..=8, got {value_bits}"
            )));
        }
        let header = CacheHeader::for_state(state, value_bits)?;
        let start = inner.stream_position()?;
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * state.dim());
        buf.extend_from_slice(&header.encode());
        for &c in state.profile().outlier_channels() {
            buf.extend_from_slice(&(c as u32).to_le_bytes());
        }
        for &m in state.profile().mean_abs() {
            buf.extend_from_slice(&(m as f32).to_le_bytes());
        }
        inner.write_all(&buf)?;
        buf.clear();
        Ok(Self {
            inner,
            header,
            start,
            buf,
        })
    }

    pub fn header(&self) -> &CacheHeader {
        &self.header
    }

    pub fn append(&mut self, entry: &KeyEntry, value: &QuantizedValueToken) -> Result<()> {
        let h = &self.header;
        if entry.inlier.m() != h.m_inlier as usize || entry.outlier.m() != h.m_outlier as usize {
            return Err(QjlError::InvalidArgument(format!(
                "entry has {}+{} sign bits, cache expects {}+{}",
                entry.inlier.m(),
                entry.outlier.m(),
                h.m_inlier,
                h.m_outlier
            )));
        }
        if value.dim() != h.d as usize || value.bits() != h.value_bits {
            return Err(QjlError::InvalidArgument(format!(
                "value token is {}-dim at {} bits, cache expects {}-dim at {} bits",
                value.dim(),
                value.bits(),
                h.d,
                h.value_bits
            )));
        }
        self.buf.clear();
        for key in [&entry.inlier, &entry.outlier] {
            for w in key.bits().words() {
                self.buf.extend_from_slice(&w.to_le_bytes());
            }
            self.buf.extend_from_slice(&half_bits(key.norm(), "key norm")?);
        }
        self.buf.extend_from_slice(&half_bits(value.zero(), "value zero point")?);
        self.buf.extend_from_slice(&half_bits(value.scale(), "value scale")?);
        pack_codes(value.codes(), value.bits(), &mut self.buf);
        self.inner.write_all(&self.buf)?;
        self.header.n += 1;
        Ok(())
    }

    /// Records the final entry count and returns the underlying writer.
    pub fn finish(mut self) -> Result<W> {
        let end = self.inner.stream_position()?;
        self.inner.seek(SeekFrom::Start(self.start + N_OFFSET))?;
        self.inner.write_all(&self.header.n.to_le_bytes())?;
        self.inner.seek(SeekFrom::Start(end))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Writes every entry of `state` with its value token.
pub fn write_cache<W: Write + Seek>(
    inner: W,
    state: &KeyCacheState,
    values: &[QuantizedValueToken],
    value_bits: u8,
) -> Result<W> {
    if values.len() != state.len() {
        return Err(QjlError::InvalidState(format!(
            "{} keys but {} value tokens",
            state.len(),
            values.len()
        )));
    }
    let mut writer = CacheWriter::new(inner, state, value_bits)?;
    for (entry, value) in state.entries().iter().zip(values) {
        writer.append(entry, value)?;
    }
    writer.finish()
}

fn read_exact_vec<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|e| QjlError::Format(format!("truncated cache ({what}): {e}")))?;
    Ok(buf)
}

fn decode_key(buf: &[u8], m: usize) -> Result<QuantizedKey> {
    let words = buf[..buf.len() - 2]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let bits = SignBits::from_words(words, m).map_err(|e| QjlError::Format(e.to_string()))?;
    let norm = f16::from_le_bytes([buf[buf.len() - 2], buf[buf.len() - 1]]).to_f64();
    QuantizedKey::new(bits, norm).map_err(|e| QjlError::Format(e.to_string()))
}

/// Reads a cache file, regenerating sketches from the stored seeds.
pub fn read_cache<R: Read>(
    mut r: R,
) -> Result<(CacheHeader, KeyCacheState, Vec<QuantizedValueToken>)> {
    let mut hb = [0u8; HEADER_LEN];
    r.read_exact(&mut hb)
        .map_err(|e| QjlError::Format(format!("truncated cache header: {e}")))?;
    let header = CacheHeader::decode(&hb)?;
    let d = header.d as usize;
    let h = header.h as usize;
    if d == 0 || h > d {
        return Err(QjlError::Format(format!("invalid cache shape d={d}, h={h}")));
    }
    if !(1..=8).contains(&header.value_bits) {
        return Err(QjlError::Format(format!(
            "invalid value bit width {}",
            header.value_bits
        )));
    }

    let raw = read_exact_vec(&mut r, 4 * h + 4 * d, "profile")?;
    let channels = raw[..4 * h]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let mean_abs = raw[4 * h..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let profile = OutlierProfile::from_parts(d, channels, mean_abs)?;
    if profile.outlier_count() != h {
        return Err(QjlError::Format("duplicate outlier channels in profile".into()));
    }

    let mut state = KeyCacheState::with_seeds(
        profile,
        header.m_inlier as usize,
        header.m_outlier as usize,
        header.master_seed,
        header.inlier_seed,
        header.outlier_seed,
        header.orthogonalized,
    )?;
    if state.m_inlier() != header.m_inlier as usize || state.m_outlier() != header.m_outlier as usize
    {
        return Err(QjlError::Format("sketch sizes inconsistent with profile".into()));
    }

    let m_in = header.m_inlier as usize;
    let m_out = header.m_outlier as usize;
    let in_len = 8 * words_for(m_in) + 2;
    let out_len = 8 * words_for(m_out) + 2;
    let codes_len = code_bytes(d, header.value_bits);
    let entry_len = in_len + out_len + 4 + codes_len;

    let n = usize::try_from(header.n)
        .map_err(|_| QjlError::Format("entry count too large".into()))?;
    let mut values = Vec::with_capacity(n.min(1 << 20));
    let mut buf = vec![0u8; entry_len];
    for i in 0..n {
        r.read_exact(&mut buf).map_err(|e| {
            QjlError::Format(format!("truncated cache: entry {i} of {n}: {e}"))
        })?;
        let inlier = decode_key(&buf[..in_len], m_in)?;
        let outlier = decode_key(&buf[in_len..in_len + out_len], m_out)?;
        state.push_entry(KeyEntry { inlier, outlier })?;
        let vb = &buf[in_len + out_len..];
        let zero = f16::from_le_bytes([vb[0], vb[1]]).to_f64();
        let scale = f16::from_le_bytes([vb[2], vb[3]]).to_f64();
        let codes = unpack_codes(&vb[4..], d, header.value_bits);
        values.push(
            QuantizedValueToken::from_parts(codes, zero, scale, header.value_bits)
                .map_err(|e| QjlError::Format(e.to_string()))?,
        );
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(QjlError::Format(
            "trailing bytes after the last cache entry".into(),
        ));
    }
    Ok((header, state, values))
}
