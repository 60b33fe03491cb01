//! Pieces shared by the fused and tiled executors: the K-segment plan, the
//! per-block binary kernel, and operand validation.

use super::fold::fold_lanes;
use super::GemmConfig;
use crate::bitpack::{plane_coeff, PackedTensor};
use crate::{Error, Result};

/// The part of one k-chunk that belongs to one scale group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Segment {
    pub kc: usize,
    pub group: usize,
    pub lo_word: usize,
    pub hi_word: usize,
    pub first_mask: u64,
    pub last_mask: u64,
    /// The group's last segment; partials are dequantized after it.
    pub ends_group: bool,
}

/// Everything an executor needs about a validated problem.
#[derive(Debug)]
pub(crate) struct Plan {
    pub segments: Vec<Segment>,
    /// `segments[by_kc[kc]]` are the segments of k-chunk `kc`.
    pub by_kc: Vec<std::ops::Range<usize>>,
    pub w_coeffs: Vec<i64>,
    pub x_coeffs: Vec<i64>,
    pub groups: usize,
    /// Lane groups used by the chunk-level fold (power of two).
    pub replicas: usize,
}

impl Plan {
    pub fn new(w: &PackedTensor, x: &PackedTensor, w_scales: usize, x_scales: usize, cfg: &GemmConfig) -> Result<Self> {
        cfg.validate()?;
        if w.cols() != x.cols() || w.cols() != cfg.k {
            return Err(Error::Shape(format!(
                "K mismatch: weights {}, activations {}, config {}",
                w.cols(),
                x.cols(),
                cfg.k
            )));
        }
        if w.rows() != cfg.n || x.rows() != cfg.m {
            return Err(Error::Shape(format!(
                "weights have {} rows and activations {}, config expects N={} M={}",
                w.rows(),
                x.rows(),
                cfg.n,
                cfg.m
            )));
        }
        if w.bits() != cfg.weight_bits || x.bits() != cfg.activation_bits {
            return Err(Error::Shape(format!(
                "operands are W{}A{}, config expects W{}A{}",
                w.bits(),
                x.bits(),
                cfg.weight_bits,
                cfg.activation_bits
            )));
        }
        let (wc, xc) = (w.config(), x.config());
        if wc.chunk_k != xc.chunk_k || wc.word_bits != xc.word_bits {
            return Err(Error::Shape(format!(
                "packing differs: weights chunk_k {} / {}-bit words, activations chunk_k {} / {}-bit words",
                wc.chunk_k, wc.word_bits, xc.chunk_k, xc.word_bits
            )));
        }
        let groups = cfg.groups();
        if w_scales != cfg.n * groups || x_scales != cfg.m * groups {
            return Err(Error::Shape(format!(
                "scale counts {w_scales} (weights) and {x_scales} (activations), expected {} and {} for {groups} groups",
                cfg.n * groups,
                cfg.m * groups
            )));
        }

        let chunk_k = wc.chunk_k;
        let wb = wc.word_bits;
        let word_mask = wc.word_mask();
        let padded_k = w.padded_cols();
        let mut segments = Vec::new();
        let mut by_kc = Vec::with_capacity(w.k_chunks());
        for kc in 0..w.k_chunks() {
            let (c_lo, c_hi) = (kc * chunk_k, (kc + 1) * chunk_k);
            let start = segments.len();
            let mut lo = c_lo;
            while lo < c_hi {
                let group = (lo / cfg.group_size).min(groups - 1);
                let group_end = if group + 1 == groups { padded_k } else { (group + 1) * cfg.group_size };
                let hi = group_end.min(c_hi);
                let (rel_lo, rel_hi) = (lo - c_lo, hi - c_lo);
                let first_mask = (word_mask << (rel_lo % wb)) & word_mask;
                let last_mask = match rel_hi % wb {
                    0 => word_mask,
                    r => (1u64 << r) - 1,
                };
                segments.push(Segment {
                    kc,
                    group,
                    lo_word: rel_lo / wb,
                    hi_word: rel_hi.div_ceil(wb),
                    first_mask,
                    last_mask,
                    ends_group: hi == group_end,
                });
                lo = hi;
            }
            by_kc.push(start..segments.len());
        }

        let coeffs = |t: &PackedTensor| {
            (0..usize::from(t.bits())).map(|s| plane_coeff(s, t.bits(), t.is_signed())).collect::<Result<Vec<_>>>()
        };
        let chunk_m = xc.chunk_m;
        let mut replicas = 1;
        while replicas * 2 * chunk_m <= xc.mma_m {
            replicas *= 2;
        }

        Ok(Self { segments, by_kc, w_coeffs: coeffs(w)?, x_coeffs: coeffs(x)?, groups, replicas })
    }
}

/// The `[bits, rows, words_per_row]` words of one `(k_chunk, row_chunk)`.
#[derive(Clone, Copy)]
pub(crate) struct ChunkView<'a> {
    pub words: &'a [u64],
    pub rows: usize,
    pub wpr: usize,
}

impl<'a> ChunkView<'a> {
    #[inline]
    fn plane_row(&self, s: usize, r: usize) -> &'a [u64] {
        let start = (s * self.rows + r) * self.wpr;
        &self.words[start..start + self.wpr]
    }
}

#[inline]
fn and_popcount(a: &[u64], b: &[u64], seg: &Segment) -> u32 {
    let (lo, hi) = (seg.lo_word, seg.hi_word);
    if hi - lo == 1 {
        return (a[lo] & b[lo] & seg.first_mask & seg.last_mask).count_ones();
    }
    let mut acc = (a[lo] & b[lo] & seg.first_mask).count_ones() + (a[hi - 1] & b[hi - 1] & seg.last_mask).count_ones();
    for (x, y) in a[lo + 1..hi - 1].iter().zip(&b[lo + 1..hi - 1]) {
        acc += (x & y).count_ones();
    }
    acc
}

/// Reusable lane storage for [`block_kernel`].
pub(crate) struct Scratch {
    lanes: Vec<i64>,
}

impl Scratch {
    pub fn new() -> Self {
        Self { lanes: Vec::new() }
    }
}

/// Accumulates the weighted binary products of one chunk pair over one
/// segment into `acc` (`x.rows × w.rows`, row-major by activation row).
///
/// Each plane pair `(s, t)` is one binary MMA pass. Weighted results land in
/// lane group `t % replicas` and are folded back to `x.rows` lanes at the
/// end. Returns the number of passes (`p · q`).
#[inline]
pub(crate) fn block_kernel(
    w: ChunkView<'_>,
    x: ChunkView<'_>,
    seg: &Segment,
    plan: &Plan,
    scratch: &mut Scratch,
    acc: &mut [i64],
    acc_stride: usize,
) -> u64 {
    let cells = x.rows * w.rows;
    let lanes = &mut scratch.lanes;
    lanes.clear();
    lanes.resize(plan.replicas * cells, 0);
    let mut passes = 0;
    for (s, &cw) in plan.w_coeffs.iter().enumerate() {
        for (t, &cx) in plan.x_coeffs.iter().enumerate() {
            let coeff = cw * cx;
            let base = (t % plan.replicas) * cells;
            for r in 0..x.rows {
                let xr = x.plane_row(t, r);
                let lane = &mut lanes[base + r * w.rows..base + (r + 1) * w.rows];
                for (c, slot) in lane.iter_mut().enumerate() {
                    *slot += coeff * i64::from(and_popcount(w.plane_row(s, c), xr, seg));
                }
            }
            passes += 1;
        }
    }
    fold_lanes(lanes, w.rows, x.rows, plan.replicas);
    for r in 0..x.rows {
        let dst = &mut acc[r * acc_stride..r * acc_stride + w.rows];
        for (d, v) in dst.iter_mut().zip(&lanes[r * w.rows..(r + 1) * w.rows]) {
            *d += v;
        }
    }
    passes
}
