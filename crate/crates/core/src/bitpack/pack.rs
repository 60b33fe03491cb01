use serde::{Deserialize, Serialize};

use super::planes::BitPlaneSet;
use crate::par::map_range;
use crate::{Error, Result};

pub const MMA_M: usize = 8;
pub const MMA_N: usize = 8;
pub const MMA_K: usize = 128;

/// Chunk geometry of a packed operand.
///
/// `chunk_m` is the number of operand rows per chunk: `min(M, MMA_M)` for
/// activations and `MMA_N` for weights. `chunk_k` bits of one row of one
/// plane are stored as `chunk_k / word_bits` consecutive words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackConfig {
    pub chunk_m: usize,
    pub chunk_k: usize,
    pub mma_m: usize,
    pub mma_n: usize,
    pub mma_k: usize,
    pub word_bits: usize,
}

impl PackConfig {
    pub fn for_activations(m: usize) -> Self {
        Self { chunk_m: m.clamp(1, MMA_M), chunk_k: MMA_K, mma_m: MMA_M, mma_n: MMA_N, mma_k: MMA_K, word_bits: 64 }
    }

    pub fn for_weights() -> Self {
        Self { chunk_m: MMA_N, ..Self::for_activations(MMA_M) }
    }

    pub fn with_word_bits(self, word_bits: usize) -> Self {
        Self { word_bits, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_bits != 32 && self.word_bits != 64 {
            return Err(Error::Config(format!("word width {} (expected 32 or 64)", self.word_bits)));
        }
        if self.chunk_k == 0 || !self.chunk_k.is_multiple_of(self.word_bits) {
            return Err(Error::Config(format!(
                "chunk_k {} is not a positive multiple of the {}-bit word",
                self.chunk_k, self.word_bits
            )));
        }
        if self.chunk_m == 0 || self.chunk_m > self.mma_m {
            return Err(Error::Config(format!("chunk_m {} outside 1..={}", self.chunk_m, self.mma_m)));
        }
        Ok(())
    }

    pub fn words_per_row(&self) -> usize {
        self.chunk_k / self.word_bits
    }

    pub(crate) fn word_mask(&self) -> u64 {
        if self.word_bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.word_bits) - 1
        }
    }
}

/// Bit planes rearranged into `[K/chunk_k, R/chunk_m, bits, chunk_m,
/// chunk_k/word_bits]` words, with R and K zero-padded to chunk multiples.
///
/// Bit `j` of a word holds column `kc*chunk_k + w*word_bits + j`. With
/// 32-bit words only the low half of each `u64` slot is used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedTensor {
    words: Vec<u64>,
    bits: u8,
    signed: bool,
    rows: usize,
    cols: usize,
    cfg: PackConfig,
}

impl PackedTensor {
    pub(crate) fn from_parts(
        words: Vec<u64>,
        bits: u8,
        signed: bool,
        rows: usize,
        cols: usize,
        cfg: PackConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let t = Self { words, bits, signed, rows, cols, cfg };
        if t.words.len() != t.expected_words() {
            return Err(Error::Shape(format!("{} packed words, layout needs {}", t.words.len(), t.expected_words())));
        }
        Ok(t)
    }

    fn expected_words(&self) -> usize {
        self.logical_shape().iter().product()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    /// Unpadded row count.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Unpadded contraction length K.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn config(&self) -> &PackConfig {
        &self.cfg
    }

    pub fn row_chunks(&self) -> usize {
        self.rows.div_ceil(self.cfg.chunk_m).max(1)
    }

    pub fn k_chunks(&self) -> usize {
        self.cols.div_ceil(self.cfg.chunk_k).max(1)
    }

    pub fn padded_rows(&self) -> usize {
        self.row_chunks() * self.cfg.chunk_m
    }

    pub fn padded_cols(&self) -> usize {
        self.k_chunks() * self.cfg.chunk_k
    }

    pub fn logical_shape(&self) -> [usize; 5] {
        [self.k_chunks(), self.row_chunks(), usize::from(self.bits), self.cfg.chunk_m, self.cfg.words_per_row()]
    }

    /// Flat word index of `(k_chunk, row_chunk, plane, row_in_chunk, word)`.
    #[inline]
    pub fn index(&self, kc: usize, rc: usize, s: usize, r: usize, w: usize) -> usize {
        let [_, rcs, bits, cm, wpr] = self.logical_shape();
        (((kc * rcs + rc) * bits + s) * cm + r) * wpr + w
    }

    /// Words of one `(k_chunk, row_chunk)` block: `[bits, chunk_m, words]`.
    #[inline]
    pub fn chunk(&self, kc: usize, rc: usize) -> &[u64] {
        let len = self.chunk_len();
        let start = (kc * self.row_chunks() + rc) * len;
        &self.words[start..start + len]
    }

    /// Words of the row-chunk range `rcs` at k-chunk `kc`; contiguous by
    /// construction of the layout.
    #[inline]
    pub fn chunk_span(&self, kc: usize, rcs: std::ops::Range<usize>) -> &[u64] {
        let len = self.chunk_len();
        let base = kc * self.row_chunks();
        &self.words[(base + rcs.start) * len..(base + rcs.end) * len]
    }

    pub fn chunk_len(&self) -> usize {
        usize::from(self.bits) * self.cfg.chunk_m * self.cfg.words_per_row()
    }

    /// Bit `s` of the element at padded coordinates `(row, col)`.
    pub fn plane_bit(&self, s: usize, row: usize, col: usize) -> u8 {
        let (kc, rem) = (col / self.cfg.chunk_k, col % self.cfg.chunk_k);
        let (w, j) = (rem / self.cfg.word_bits, rem % self.cfg.word_bits);
        let word = self.words[self.index(kc, row / self.cfg.chunk_m, s, row % self.cfg.chunk_m, w)];
        (word >> j & 1) as u8
    }
}

/// Reads one word of a plane row starting at column `start`
/// (`start` is a multiple of the word width).
#[inline]
fn extract(row: &[u64], start: usize, mask: u64) -> u64 {
    match row.get(start / 64) {
        Some(&w) => (w >> (start % 64)) & mask,
        None => 0,
    }
}

pub fn pack(bp: &BitPlaneSet, cfg: &PackConfig) -> Result<PackedTensor> {
    cfg.validate()?;
    let rows = bp.rows();
    let cols = bp.cols();
    let bits = usize::from(bp.bits());
    let k_chunks = cols.div_ceil(cfg.chunk_k).max(1);
    let row_chunks = rows.div_ceil(cfg.chunk_m).max(1);
    let wpr = cfg.words_per_row();
    let mask = cfg.word_mask();

    // One independent block per k-chunk; blocks concatenate in kc order.
    let blocks = map_range(k_chunks, 0, |kc| {
        let mut block = Vec::with_capacity(row_chunks * bits * cfg.chunk_m * wpr);
        for rc in 0..row_chunks {
            for s in 0..bits {
                for r in 0..cfg.chunk_m {
                    let row = rc * cfg.chunk_m + r;
                    for w in 0..wpr {
                        block.push(if row < rows {
                            let start = kc * cfg.chunk_k + w * cfg.word_bits;
                            extract(bp.plane_row(s, row), start, mask)
                        } else {
                            0
                        });
                    }
                }
            }
        }
        block
    });
    PackedTensor::from_parts(blocks.concat(), bp.bits(), bp.is_signed(), rows, cols, *cfg)
}

pub fn unpack(p: &PackedTensor, cfg: &PackConfig) -> Result<BitPlaneSet> {
    if p.cfg != *cfg {
        return Err(Error::format(0, format!("packed with {:?}, unpack requested with {:?}", p.cfg, cfg)));
    }
    if p.words.len() != p.expected_words() {
        return Err(Error::format(0, "word count does not match packed metadata"));
    }
    let row_words = p.cols.div_ceil(64);
    let bits = usize::from(p.bits);
    let wpr = cfg.words_per_row();
    let mut planes = vec![vec![0u64; p.rows * row_words]; bits];
    for (s, plane) in planes.iter_mut().enumerate() {
        for row in 0..p.rows {
            let (rc, r) = (row / cfg.chunk_m, row % cfg.chunk_m);
            for kc in 0..p.k_chunks() {
                for w in 0..wpr {
                    let start = kc * cfg.chunk_k + w * cfg.word_bits;
                    if start >= p.cols {
                        break;
                    }
                    let mut word = p.words[p.index(kc, rc, s, r, w)];
                    let valid = (p.cols - start).min(cfg.word_bits);
                    if valid < 64 {
                        word &= (1u64 << valid) - 1;
                    }
                    plane[row * row_words + start / 64] |= word << (start % 64);
                }
            }
        }
    }
    BitPlaneSet::from_plane_rows(planes, p.bits, p.signed, p.rows, p.cols)
}
