use serde::Serialize;

use super::kernel::{block_kernel, ChunkView, Plan, Scratch};
use super::GemmConfig;
use crate::bitpack::PackedTensor;
use crate::par::map_range;
use crate::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GemmStats {
    /// Binary MMA passes (one per plane pair per chunk-pair segment).
    pub bmma_passes: u64,
    /// `(activation chunk, weight chunk, K segment)` triples processed.
    pub chunk_pair_segments: u64,
}

impl std::ops::AddAssign for GemmStats {
    fn add_assign(&mut self, rhs: Self) {
        self.bmma_passes += rhs.bmma_passes;
        self.chunk_pair_segments += rhs.chunk_pair_segments;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GemmOutput {
    /// Row-major `[M, N]`.
    pub data: Vec<f32>,
    pub m: usize,
    pub n: usize,
    /// Per-group exact integer partials `[M][N][groups]`, when requested.
    pub trace: Option<Vec<i64>>,
    pub stats: GemmStats,
}

impl GemmOutput {
    #[inline]
    pub fn get(&self, m: usize, n: usize) -> f32 {
        self.data[m * self.n + n]
    }
}

struct ColumnBlock {
    /// `[M, cols]` outputs for this block of weight rows.
    y: Vec<f64>,
    trace: Vec<i64>,
    stats: GemmStats,
}

/// Bit-serial GEMM with dequantization fused into the group accumulation:
///
/// `Y[m,n] = Σ_g Sw[n,g]·Sx[m,g] · Σ_s Σ_t cw(s)·cx(t)·bmma(W_g^(s), X_g^(t))`
///
/// The inner integer sum per group is exact; groups are dequantized and
/// accumulated in ascending order in `f64`. Work is split over weight row
/// chunks, `cfg.worker_count` at a time.
pub fn group_matmul_fused(
    w: &PackedTensor,
    x: &PackedTensor,
    w_scales: &[f32],
    x_scales: &[f32],
    cfg: &GemmConfig,
) -> Result<GemmOutput> {
    let plan = Plan::new(w, x, w_scales.len(), x_scales.len(), cfg)?;
    let (m, n, groups) = (cfg.m, cfg.n, plan.groups);
    let cn = w.config().chunk_m;
    let cm = x.config().chunk_m;
    let wpr = w.config().words_per_row();

    let blocks = map_range(w.row_chunks(), cfg.worker_count, |rcw| {
        let n0 = rcw * cn;
        let cols = cn.min(n - n0);
        let mut out = ColumnBlock {
            y: vec![0.0; m * cols],
            trace: if cfg.trace { vec![0; m * cols * groups] } else { Vec::new() },
            stats: GemmStats::default(),
        };
        let mut scratch = Scratch::new();
        let mut acc = vec![0i64; cm * cn];
        for rcx in 0..x.row_chunks() {
            let m0 = rcx * cm;
            let rows = cm.min(m - m0);
            acc.fill(0);
            for seg in &plan.segments {
                let wv = ChunkView { words: w.chunk(seg.kc, rcw), rows: cn, wpr };
                let xv = ChunkView { words: x.chunk(seg.kc, rcx), rows: cm, wpr };
                out.stats.bmma_passes += block_kernel(wv, xv, seg, &plan, &mut scratch, &mut acc, cn);
                out.stats.chunk_pair_segments += 1;
                if !seg.ends_group {
                    continue;
                }
                let g = seg.group;
                for r in 0..rows {
                    let sx = x_scales[(m0 + r) * groups + g];
                    for c in 0..cols {
                        let partial = acc[r * cn + c];
                        let sw = w_scales[(n0 + c) * groups + g];
                        out.y[(m0 + r) * cols + c] += (f64::from(sw) * f64::from(sx)) * partial as f64;
                        if cfg.trace {
                            out.trace[((m0 + r) * cols + c) * groups + g] = partial;
                        }
                    }
                }
                acc.fill(0);
            }
        }
        out
    });

    let mut data = vec![0f32; m * n];
    let mut trace = cfg.trace.then(|| vec![0i64; m * n * groups]);
    let mut stats = GemmStats::default();
    for (rcw, block) in blocks.into_iter().enumerate() {
        let n0 = rcw * cn;
        let cols = cn.min(n - n0);
        for r in 0..m {
            for c in 0..cols {
                data[r * n + n0 + c] = block.y[r * cols + c] as f32;
                if let Some(t) = trace.as_mut() {
                    let src = (r * cols + c) * groups;
                    let dst = (r * n + n0 + c) * groups;
                    t[dst..dst + groups].copy_from_slice(&block.trace[src..src + groups]);
                }
            }
        }
        stats += block.stats;
    }
    Ok(GemmOutput { data, m, n, trace, stats })
}
