//! Binary encoding of [`QuantizedMessage`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FQL1" | d u32 | B u32 | q u32 | R u32 | L u32 | labels-present u8
//! codebook: R*L*(d/q) binary64, group-major, centroid-major, element-major
//! codewords: B*q fields of ceil(log2 L) bits, MSB-first, j outer / s inner,
//!            zero-padded to a byte boundary
//! labels: B u32 (only when the flag byte is 1)
//! ```

use super::bits::{ceil_log2, HEADER_BITS};
use super::{Codebook, CodewordMatrix, QuantizedMessage, QuantizerConfig};
use crate::error::{ensure, Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"FQL1";

/// Bit counts of each section, measured while writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WireLayout {
    pub header_bits: u64,
    pub codebook_bits: u64,
    pub codeword_bits: u64,
    pub padding_bits: u64,
    pub label_bits: u64,
}

impl WireLayout {
    /// Codebook plus codewords, the part counted in compression ratios.
    pub fn payload_bits(&self) -> u64 {
        self.codebook_bits + self.codeword_bits
    }

    pub fn total_bits(&self) -> u64 {
        self.header_bits + self.payload_bits() + self.padding_bits + self.label_bits
    }
}

/// MSB-first bit packer.
#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    used: u32,
    written: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn write(&mut self, value: u64, width: u32) {
        for i in (0..width).rev() {
            if self.used == 0 {
                self.bytes.push(0);
            }
            let bit = ((value >> i) & 1) as u8;
            let last = self.bytes.last_mut().expect("byte pushed above");
            *last |= bit << (7 - self.used);
            self.used = (self.used + 1) % 8;
            self.written += 1;
        }
    }

    pub fn bits_written(&self) -> u64 {
        self.written
    }

    /// Returns the bytes; trailing bits of the last byte are zero.
    pub fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn read(&mut self, width: u32) -> Option<u64> {
        let mut v = 0u64;
        for _ in 0..width {
            let byte = *self.bytes.get((self.pos / 8) as usize)?;
            let bit = (byte >> (7 - (self.pos % 8))) & 1;
            v = (v << 1) | bit as u64;
            self.pos += 1;
        }
        Some(v)
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Config(format!("{what} = {v} exceeds the u32 wire range")))
}

pub fn serialize(msg: &QuantizedMessage) -> Result<(Vec<u8>, WireLayout)> {
    let cfg = &msg.config;
    cfg.validate_for(msg.dim)?;
    let sub_dim = cfg.subvector_dim(msg.dim);
    let width = ceil_log2(cfg.centroids);
    let mut out = Vec::new();
    let mut layout = WireLayout::default();

    out.extend_from_slice(MAGIC);
    for (v, what) in [
        (msg.dim, "d"),
        (msg.batch, "B"),
        (cfg.subvectors, "q"),
        (cfg.groups, "R"),
        (cfg.centroids, "L"),
    ] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    out.push(msg.labels.is_some() as u8);
    layout.header_bits = out.len() as u64 * 8;
    debug_assert_eq!(layout.header_bits, HEADER_BITS);

    let start = out.len();
    ensure!(
        msg.codebook.groups.len() == cfg.groups,
        Shape,
        "codebook has {} groups, config says {}",
        msg.codebook.groups.len(),
        cfg.groups
    );
    for group in &msg.codebook.groups {
        ensure!(
            group.shape() == (sub_dim, cfg.centroids),
            Shape,
            "codebook group has shape {:?}, expected {:?}",
            group.shape(),
            (sub_dim, cfg.centroids)
        );
        // column-major storage is already centroid-major, element-major
        for v in group.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    layout.codebook_bits = (out.len() - start) as u64 * 8;

    let mut writer = BitWriter::new();
    for &code in msg.codewords.as_slice() {
        ensure!(
            (code as usize) < cfg.centroids,
            Corrupt,
            "codeword {code} exceeds L = {}",
            cfg.centroids
        );
        writer.write(code as u64, width);
    }
    layout.codeword_bits = writer.bits_written();
    let packed = writer.finish();
    layout.padding_bits = packed.len() as u64 * 8 - layout.codeword_bits;
    out.extend_from_slice(&packed);

    if let Some(labels) = &msg.labels {
        ensure!(
            labels.len() == msg.batch,
            Shape,
            "{} labels for a batch of {}",
            labels.len(),
            msg.batch
        );
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        layout.label_bits = labels.len() as u64 * 32;
    }
    Ok((out, layout))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Corrupt(format!(
                    "truncated message: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<QuantizedMessage> {
    let mut cur = Cursor { bytes, pos: 0 };
    ensure!(cur.take(4)? == MAGIC, Corrupt, "bad magic");
    let dim = cur.u32()? as usize;
    let batch = cur.u32()? as usize;
    let q = cur.u32()? as usize;
    let r = cur.u32()? as usize;
    let l = cur.u32()? as usize;
    let has_labels = match cur.take(1)?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::Corrupt(format!("invalid labels flag {other}"))),
    };
    let cfg = QuantizerConfig::new(q, r, l);
    cfg.validate_for(dim)
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    let sub_dim = cfg.subvector_dim(dim);

    let mut groups = Vec::with_capacity(r);
    for _ in 0..r {
        let raw = cur.take(sub_dim * l * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        groups.push(Matrix::from_col_major(sub_dim, l, data)?);
    }

    let width = ceil_log2(l);
    let total_bits = (batch * q) as u64 * width as u64;
    let packed = cur.take(total_bits.div_ceil(8) as usize)?;
    let mut reader = BitReader::new(packed);
    let mut codes = Vec::with_capacity(batch * q);
    for _ in 0..batch * q {
        let code = reader.read(width).expect("length checked above");
        ensure!(
            (code as usize) < l,
            Corrupt,
            "codeword {code} exceeds L = {l}"
        );
        codes.push(code as u32);
    }
    ensure!(
        reader.read((8 - (total_bits % 8) as u32) % 8) == Some(0),
        Corrupt,
        "non-zero padding bits"
    );

    let labels = if has_labels {
        let mut v = Vec::with_capacity(batch);
        for _ in 0..batch {
            v.push(cur.u32()?);
        }
        Some(v)
    } else {
        None
    };
    ensure!(
        cur.pos == bytes.len(),
        Corrupt,
        "{} trailing bytes",
        bytes.len() - cur.pos
    );

    Ok(QuantizedMessage {
        config: cfg,
        dim,
        batch,
        codebook: Codebook { groups },
        codewords: CodewordMatrix::new(batch, q, codes)?,
        labels,
    })
}
