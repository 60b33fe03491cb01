//! Tiled executor with a multi-stage prefetch pipeline.
//!
//! Output tiles of `bm × bn` are split into contiguous stripes, one per
//! worker. Within a stripe, a prefetch thread gathers the packed operand
//! words of each `(tile, k-tile)` step into one of `pipeline_stages`
//! buffers while the worker computes on an already filled buffer. Buffers
//! circulate through a pair of bounded channels, so at most
//! `pipeline_stages` steps are in flight.

use std::ops::Range;
use std::sync::mpsc::sync_channel;

use super::kernel::{block_kernel, ChunkView, Plan, Scratch};
use super::{GemmConfig, GemmOutput, GemmStats};
use crate::bitpack::PackedTensor;
use crate::par::map_range;
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct Tile {
    rx: Range<usize>,
    rw: Range<usize>,
}

#[derive(Default)]
struct StageBuf {
    x: Vec<u64>,
    w: Vec<u64>,
}

struct Ctx<'a> {
    w: &'a PackedTensor,
    x: &'a PackedTensor,
    w_scales: &'a [f32],
    x_scales: &'a [f32],
    plan: Plan,
    k_tiles: Vec<Range<usize>>,
    m: usize,
    n: usize,
    trace: bool,
}

struct TileState {
    acc: Vec<i64>,
    y: Vec<f64>,
    /// `[cell][group]` integer partials when tracing.
    trace: Vec<i64>,
}

impl Ctx<'_> {
    fn gather(&self, tile: &Tile, kt: usize, buf: &mut StageBuf) {
        buf.x.clear();
        buf.w.clear();
        for kc in self.k_tiles[kt].clone() {
            buf.x.extend_from_slice(self.x.chunk_span(kc, tile.rx.clone()));
            buf.w.extend_from_slice(self.w.chunk_span(kc, tile.rw.clone()));
        }
    }

    fn new_state(&self, tile: &Tile) -> TileState {
        let cells = tile.rx.len() * self.x.config().chunk_m * tile.rw.len() * self.w.config().chunk_m;
        let trace = if self.trace { vec![0; cells * self.plan.groups] } else { Vec::new() };
        TileState { acc: vec![0; cells], y: vec![0.0; cells], trace }
    }

    fn compute(
        &self,
        tile: &Tile,
        kt: usize,
        buf: &StageBuf,
        st: &mut TileState,
        scratch: &mut Scratch,
        stats: &mut GemmStats,
    ) {
        let (cm, cn) = (self.x.config().chunk_m, self.w.config().chunk_m);
        let wpr = self.w.config().words_per_row();
        let (xcl, wcl) = (self.x.chunk_len(), self.w.chunk_len());
        let (x_span, w_span) = (tile.rx.len() * xcl, tile.rw.len() * wcl);
        let stride = tile.rw.len() * cn;
        let (m0, n0) = (tile.rx.start * cm, tile.rw.start * cn);
        let groups = self.plan.groups;

        for (i, kc) in self.k_tiles[kt].clone().enumerate() {
            let xs = &buf.x[i * x_span..(i + 1) * x_span];
            let ws = &buf.w[i * w_span..(i + 1) * w_span];
            for seg in &self.plan.segments[self.plan.by_kc[kc].clone()] {
                for a in 0..tile.rx.len() {
                    let xv = ChunkView { words: &xs[a * xcl..(a + 1) * xcl], rows: cm, wpr };
                    for b in 0..tile.rw.len() {
                        let wv = ChunkView { words: &ws[b * wcl..(b + 1) * wcl], rows: cn, wpr };
                        let off = a * cm * stride + b * cn;
                        stats.bmma_passes += block_kernel(wv, xv, seg, &self.plan, scratch, &mut st.acc[off..], stride);
                        stats.chunk_pair_segments += 1;
                    }
                }
                if !seg.ends_group {
                    continue;
                }
                let g = seg.group;
                let rows = (tile.rx.len() * cm).min(self.m - m0);
                let cols = stride.min(self.n - n0);
                for r in 0..rows {
                    let sx = self.x_scales[(m0 + r) * groups + g];
                    for c in 0..cols {
                        let sw = self.w_scales[(n0 + c) * groups + g];
                        let partial = st.acc[r * stride + c];
                        if self.trace {
                            st.trace[(r * stride + c) * groups + g] = partial;
                        }
                        st.y[r * stride + c] += (f64::from(sw) * f64::from(sx)) * partial as f64;
                    }
                }
                st.acc.fill(0);
            }
        }
    }

    fn run_stripe(&self, tiles: &[Tile], stages: usize) -> (Vec<TileState>, GemmStats) {
        let steps: Vec<(usize, usize)> =
            (0..tiles.len()).flat_map(|t| (0..self.k_tiles.len()).map(move |kt| (t, kt))).collect();
        let last_kt = self.k_tiles.len() - 1;
        let mut results = Vec::with_capacity(tiles.len());
        let mut stats = GemmStats::default();
        let mut scratch = Scratch::new();
        let mut state: Option<TileState> = None;

        let mut consume = |t: usize, kt: usize, buf: &StageBuf| {
            let st = state.get_or_insert_with(|| self.new_state(&tiles[t]));
            self.compute(&tiles[t], kt, buf, st, &mut scratch, &mut stats);
            if kt == last_kt {
                results.push(state.take().expect("tile state"));
            }
        };

        if stages == 1 {
            let mut buf = StageBuf::default();
            for &(t, kt) in &steps {
                self.gather(&tiles[t], kt, &mut buf);
                consume(t, kt, &buf);
            }
        } else {
            std::thread::scope(|scope| {
                let (full_tx, full_rx) = sync_channel::<StageBuf>(stages);
                let (free_tx, free_rx) = sync_channel::<StageBuf>(stages);
                for _ in 0..stages {
                    free_tx.send(StageBuf::default()).expect("free list has room");
                }
                let steps_ref = &steps;
                scope.spawn(move || {
                    for &(t, kt) in steps_ref {
                        let Ok(mut buf) = free_rx.recv() else { return };
                        self.gather(&tiles[t], kt, &mut buf);
                        if full_tx.send(buf).is_err() {
                            return;
                        }
                    }
                });
                for &(t, kt) in &steps {
                    let buf = full_rx.recv().expect("prefetch thread delivers every step");
                    consume(t, kt, &buf);
                    // The producer may already be done; a closed free list is fine.
                    let _ = free_tx.send(buf);
                }
            });
        }
        (results, stats)
    }
}

/// Tiled, pipelined execution of the fused bit-serial GEMM.
///
/// The result is bit-identical to [`group_matmul_fused`](super::group_matmul_fused)
/// for every tile shape, stage count and worker count: each output cell sees
/// the same segments in the same order.
pub fn execute_tiled(
    w: &PackedTensor,
    x: &PackedTensor,
    w_scales: &[f32],
    x_scales: &[f32],
    cfg: &GemmConfig,
) -> Result<GemmOutput> {
    let plan = Plan::new(w, x, w_scales.len(), x_scales.len(), cfg)?;
    let (cm, cn, ck) = (x.config().chunk_m, w.config().chunk_m, w.config().chunk_k);
    if !cfg.bm.is_multiple_of(cm) || !cfg.bn.is_multiple_of(cn) || !cfg.bk.is_multiple_of(ck) {
        return Err(Error::Config(format!(
            "tile {}x{}x{} is not a multiple of the {cm}x{cn}x{ck} chunk",
            cfg.bm, cfg.bn, cfg.bk
        )));
    }
    let (tm, tn, tk) = (cfg.bm / cm, cfg.bn / cn, cfg.bk / ck);
    let (xrc, wrc, kcs) = (x.row_chunks(), w.row_chunks(), w.k_chunks());

    let mut tiles = Vec::new();
    for ix in (0..xrc).step_by(tm) {
        for iw in (0..wrc).step_by(tn) {
            tiles.push(Tile { rx: ix..(ix + tm).min(xrc), rw: iw..(iw + tn).min(wrc) });
        }
    }
    let k_tiles = (0..kcs).step_by(tk).map(|k| k..(k + tk).min(kcs)).collect();
    let ctx = Ctx { w, x, w_scales, x_scales, plan, k_tiles, m: cfg.m, n: cfg.n, trace: cfg.trace };
    let groups = ctx.plan.groups;

    let per_stripe = tiles.len().div_ceil(cfg.worker_count);
    let stripes: Vec<&[Tile]> = tiles.chunks(per_stripe).collect();
    let results = map_range(stripes.len(), cfg.worker_count, |i| ctx.run_stripe(stripes[i], cfg.pipeline_stages));

    let (m, n) = (cfg.m, cfg.n);
    let mut data = vec![0f32; m * n];
    let mut trace = if cfg.trace { Some(vec![0i64; m * n * groups]) } else { None };
    let mut stats = GemmStats::default();
    for (stripe, (ys, st)) in stripes.iter().zip(results) {
        stats += st;
        for (tile, st) in stripe.iter().zip(ys) {
            let stride = tile.rw.len() * cn;
            let (m0, n0) = (tile.rx.start * cm, tile.rw.start * cn);
            let rows = (tile.rx.len() * cm).min(m - m0);
            let cols = stride.min(n - n0);
            for r in 0..rows {
                for c in 0..cols {
                    let (cell, out) = (r * stride + c, (m0 + r) * n + n0 + c);
                    data[out] = st.y[cell] as f32;
                    if let Some(t) = trace.as_mut() {
                        t[out * groups..(out + 1) * groups]
                            .copy_from_slice(&st.trace[cell * groups..(cell + 1) * groups]);
                    }
                }
            }
        }
    }
    Ok(GemmOutput { data, m, n, trace, stats })
}
