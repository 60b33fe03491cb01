//! Access patterns for the layouts under study.
//!
//! The naive 6-bit map reads the row-major, tightly bit-packed reading of a
//! per-thread load: each lane fetches two consecutive elements through the
//! 32-bit words that cover them. This thread-to-element assignment is an
//! interpretation of a figure, not a documented hardware mapping.

use serde::{Deserialize, Serialize};

use super::{simulate, AccessPattern, MemModel, MemorySpace, Phase, Request};
use crate::bitpack::PackConfig;
use crate::{Error, Result};

const WORD_BYTES: u64 = 4;
/// Bytes each lane moves per global→shared copy.
const COPY_BYTES: u64 = 16;
/// K extent of one binary MMA fragment row, in bits.
const MMA_K_BITS: usize = 128;

fn into_phases(label: &str, space: MemorySpace, requests: Vec<Option<Request>>, lanes: usize) -> Vec<Phase> {
    requests
        .chunks(lanes)
        .enumerate()
        .map(|(i, chunk)| Phase {
            label: format!("{label}[{i}]"),
            space,
            lanes: chunk.iter().map(|r| r.iter().copied().collect()).collect(),
        })
        .collect()
}

/// Row-major, tightly packed `bits`-bit elements; every lane reads the next
/// two elements of the stream through the 32-bit words covering them.
pub fn naive_layout_pattern(bits: u32, rows: usize, cols: usize, model: &MemModel) -> Result<AccessPattern> {
    if ![4, 6, 8, 16].contains(&bits) {
        return Err(Error::InvalidInput(format!("naive layout for {bits}-bit elements")));
    }
    let total = (rows * cols) as u64;
    if total == 0 {
        return Err(Error::InvalidInput("empty naive layout".into()));
    }
    let bits = u64::from(bits);
    let extent_bytes = (total * bits).div_ceil(32) * WORD_BYTES;
    let requests = (0..total.div_ceil(2))
        .map(|pair| {
            let first = pair * 2;
            let count = (total - first).min(2);
            let (lo, hi) = (first * bits, (first + count) * bits);
            let (w0, w1) = (lo / 32, hi.div_ceil(32));
            Some(Request { byte_offset: w0 * WORD_BYTES, byte_length: (w1 - w0) * WORD_BYTES, useful_bits: hi - lo })
        })
        .collect();
    Ok(AccessPattern {
        description: format!("naive {bits}-bit {rows}x{cols}"),
        extent_bytes,
        phases: into_phases("s2r", MemorySpace::Shared, requests, model.lane_count as usize),
    })
}

/// FP16 operand fragment of `mma.m16n8k8`: 16 rows × 8 halves, row-major,
/// lane `T` reading the aligned element pair at row `T/4`, column `2(T%4)`.
pub fn fp16_mma_pattern(model: &MemModel) -> AccessPattern {
    let requests = (0..32u64).map(|t| Some(Request::dense(((t / 4) * 8 + 2 * (t % 4)) * 2, 4))).collect();
    AccessPattern {
        description: "fp16 m16n8k8 fragment".into(),
        extent_bytes: 16 * 8 * 2,
        phases: into_phases("s2r", MemorySpace::Shared, requests, model.lane_count as usize),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChunkedOptions {
    /// Store every chunk padded to `mma_m` rows, and read one plane per MMA
    /// including the zero rows, instead of filling spare MMA rows with
    /// further bit planes.
    #[serde(default)]
    pub zero_fill: bool,
}

/// Lane-to-address maps for a `[BK/chunk_k, BM/chunk_m, bits, chunk_m,
/// chunk_k]` operand tile.
///
/// Phases labelled `g2s.load` read the packed tile from global memory,
/// `g2s.store` write it into shared memory (16 bytes per lane), and `s2r`
/// load binary MMA fragments into registers (4 bytes per lane; lane `T`
/// takes fragment row `T/4`, word `T%4`).
pub fn chunked_layout_pattern(
    cfg: &PackConfig,
    bits: u32,
    bm: usize,
    bk: usize,
    opts: ChunkedOptions,
    model: &MemModel,
) -> Result<AccessPattern> {
    cfg.validate()?;
    let (cm, ck) = (cfg.chunk_m, cfg.chunk_k);
    if bits == 0 || bits > 8 {
        return Err(Error::Config(format!("{bits}-bit chunked layout")));
    }
    if bm == 0 || !bm.is_multiple_of(cm) || bk == 0 || !bk.is_multiple_of(ck) || ck % MMA_K_BITS != 0 {
        return Err(Error::Config(format!("tile {bm}x{bk} incompatible with {cm}x{ck} chunks")));
    }
    let bits = bits as usize;
    let lanes = model.lane_count as usize;
    let row_bytes = (ck / 8) as u64;
    let stored_rows = if opts.zero_fill { cfg.mma_m } else { cm };
    let blocks = (bk / ck) * (bm / cm);
    let compact_block = (bits * cm) as u64 * row_bytes;
    let stored_block = (bits * stored_rows) as u64 * row_bytes;
    let compact_bytes = blocks as u64 * compact_block;
    let extent_bytes = blocks as u64 * stored_block;

    let loads: Vec<Option<Request>> =
        (0..compact_bytes / COPY_BYTES).map(|i| Some(Request::dense(i * COPY_BYTES, COPY_BYTES))).collect();
    let stores = (0..compact_bytes / COPY_BYTES)
        .map(|i| {
            let off = i * COPY_BYTES;
            let (block, rest) = (off / compact_block, off % compact_block);
            let (plane_row, within) = (rest / row_bytes, rest % row_bytes);
            let (s, r) = (plane_row / cm as u64, plane_row % cm as u64);
            let dst = block * stored_block + (s * stored_rows as u64 + r) * row_bytes + within;
            Some(Request::dense(dst, COPY_BYTES))
        })
        .collect();

    // Fragment rows per MMA, and how many planes share one MMA.
    let frag_rows = cfg.mma_m;
    let planes_per_mma = if opts.zero_fill { 1 } else { (frag_rows / cm).max(1) };
    let mut s2r = Vec::new();
    for block in 0..blocks as u64 {
        for p0 in (0..bits).step_by(planes_per_mma) {
            for ksub in 0..(ck / MMA_K_BITS) as u64 {
                let lanes_req = (0..lanes)
                    .map(|t| {
                        let (frag_row, word) = (t / 4, (t % 4) as u64);
                        if frag_row >= frag_rows {
                            return None;
                        }
                        let (s, r) = if opts.zero_fill { (p0, frag_row) } else { (p0 + frag_row / cm, frag_row % cm) };
                        if s >= bits || r >= stored_rows {
                            return None;
                        }
                        let off = block * stored_block
                            + (s * stored_rows + r) as u64 * row_bytes
                            + ksub * (MMA_K_BITS as u64 / 8)
                            + word * WORD_BYTES;
                        let useful = if r < cm { 32 } else { 0 };
                        Some(Request { byte_offset: off, byte_length: WORD_BYTES, useful_bits: useful })
                    })
                    .collect::<Vec<_>>();
                s2r.push(Phase {
                    label: format!("s2r[{}]", s2r.len()),
                    space: MemorySpace::Shared,
                    lanes: lanes_req.into_iter().map(|r| r.into_iter().collect()).collect(),
                });
            }
        }
    }

    let mut phases = into_phases("g2s.load", MemorySpace::Global, loads, lanes);
    phases.extend(into_phases("g2s.store", MemorySpace::Shared, stores, lanes));
    phases.extend(s2r);
    Ok(AccessPattern {
        description: format!(
            "chunked {bits}-bit BM={bm} BK={bk} chunk {cm}x{ck}{}",
            if opts.zero_fill { " zero-fill" } else { "" }
        ),
        extent_bytes,
        phases,
    })
}

/// The three reference patterns and the utilization each must show:
/// aligned FP16 pairs (1.0), 6-bit pairs inside one word (0.375), and 6-bit
/// pairs straddling a word boundary (0.1875).
pub fn canonical_patterns(model: &MemModel) -> Result<Vec<(&'static str, AccessPattern, f64)>> {
    let naive6 = naive_layout_pattern(6, 16, 64, model)?;
    let one_word = |r: &Request| r.byte_length == WORD_BYTES;
    Ok(vec![
        ("fp16_aligned", fp16_mma_pattern(model), 1.0),
        ("naive6_in_word", naive6.filter_requests("naive 6-bit pairs within one word", one_word), 0.375),
        ("naive6_straddling", naive6.filter_requests("naive 6-bit pairs straddling a word", |r| !one_word(r)), 0.1875),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenResult {
    pub name: String,
    pub expected: f64,
    pub utilization: f64,
    pub pass: bool,
}

pub fn golden_check(model: &MemModel) -> Result<Vec<GoldenResult>> {
    canonical_patterns(model)?
        .into_iter()
        .map(|(name, pattern, expected)| {
            let utilization = simulate(&pattern, model)?.utilization;
            Ok(GoldenResult { name: name.into(), expected, utilization, pass: utilization == expected })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NaiveDims {
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkedDims {
    pub bm: usize,
    pub bk: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkDims {
    pub m: usize,
    pub k: usize,
}

/// JSON layout description accepted by the command line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayoutSpec {
    Naive {
        bits: u32,
        dims: NaiveDims,
    },
    Chunked {
        bits: u32,
        dims: ChunkedDims,
        #[serde(default)]
        chunk: Option<ChunkDims>,
        #[serde(default)]
        zero_fill: bool,
    },
}

impl LayoutSpec {
    pub fn pattern(&self, model: &MemModel) -> Result<AccessPattern> {
        match *self {
            LayoutSpec::Naive { bits, dims } => naive_layout_pattern(bits, dims.rows, dims.cols, model),
            LayoutSpec::Chunked { bits, dims, chunk, zero_fill } => {
                let mut cfg = PackConfig::for_activations(dims.bm);
                if let Some(c) = chunk {
                    cfg.chunk_m = c.m;
                    cfg.chunk_k = c.k;
                }
                chunked_layout_pattern(&cfg, bits, dims.bm, dims.bk, ChunkedOptions { zero_fill }, model)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p: &AccessPattern) -> super::super::LayoutReport {
        simulate(p, &MemModel::default()).unwrap()
    }

    #[test]
    fn golden_triple_is_exact() {
        for g in golden_check(&MemModel::default()).unwrap() {
            assert!(g.pass, "{} -> {} (expected {})", g.name, g.utilization, g.expected);
        }
    }

    #[test]
    fn naive_sixteen_bit_is_aligned() {
        let r = run(&naive_layout_pattern(16, 8, 32, &MemModel::default()).unwrap());
        assert_eq!(r.utilization, 1.0);
        assert_eq!(r.bank_conflicts, 0);
    }

    #[test]
    fn naive_eight_bit_uses_half_of_each_word() {
        let r = run(&naive_layout_pattern(8, 8, 32, &MemModel::default()).unwrap());
        assert_eq!(r.utilization, 0.5);
    }

    #[test]
    fn naive_six_bit_straddles_every_sixteen_elements() {
        let p = naive_layout_pattern(6, 4, 64, &MemModel::default()).unwrap();
        let lanes: Vec<Request> = p.phases.iter().flat_map(|ph| ph.lanes.iter().flatten().copied()).collect();
        // Oracle: pair i covers bits [12i, 12i+12); it straddles when the
        // first and last bit fall in different 32-bit words.
        for (i, r) in lanes.iter().enumerate() {
            let (lo, hi) = (12 * i, 12 * i + 11);
            assert_eq!(r.byte_length == 8, lo / 32 != hi / 32, "pair {i}");
        }
        for window in lanes.chunks(8) {
            assert!(window.iter().any(|r| r.byte_length == 8));
        }
    }

    #[test]
    fn naive_rejects_odd_widths() {
        assert!(naive_layout_pattern(5, 2, 2, &MemModel::default()).is_err());
    }

    #[test]
    fn chunked_six_bit_tile_is_conflict_free() {
        let cfg = PackConfig::for_activations(2);
        let p = chunked_layout_pattern(&cfg, 6, 2, 512, ChunkedOptions::default(), &MemModel::default()).unwrap();
        let r = run(&p);
        assert_eq!(r.bank_conflicts, 0);
        assert_eq!(r.conflicts_in("g2s"), 0);
        assert_eq!(r.conflicts_in("s2r"), 0);
        // 768 bytes: two warp loads of four 128-byte transactions at most.
        assert_eq!(r.transactions_in("g2s.load"), vec![4, 2]);
        // Fragments without zero rows merge into one transaction each.
        assert!(r.transactions_in("s2r").iter().all(|&t| t == 1));
        assert_eq!(r.utilization, 1.0);
    }

    #[test]
    fn degenerate_tile_is_one_dense_block() {
        let cfg = PackConfig::for_activations(8);
        let p = chunked_layout_pattern(&cfg, 6, 8, 128, ChunkedOptions::default(), &MemModel::default()).unwrap();
        assert_eq!(p.extent_bytes, 6 * 8 * 16);
        let mut offsets: Vec<u64> = p
            .phases
            .iter()
            .filter(|ph| ph.label.starts_with("g2s.load"))
            .flat_map(|ph| ph.lanes.iter().flatten().map(|r| r.byte_offset))
            .collect();
        offsets.sort_unstable();
        assert_eq!(offsets, (0..48).map(|i| i * 16).collect::<Vec<_>>());
    }

    #[test]
    fn zero_fill_costs_bandwidth_and_conflicts() {
        let cfg = PackConfig::for_activations(2);
        let model = MemModel::default();
        let compact = run(&chunked_layout_pattern(&cfg, 6, 2, 512, ChunkedOptions::default(), &model).unwrap());
        let padded = run(&chunked_layout_pattern(&cfg, 6, 2, 512, ChunkedOptions { zero_fill: true }, &model).unwrap());
        assert!(padded.utilization < compact.utilization);
        assert!(padded.conflicts_in("g2s.store") > 0);
    }

    #[test]
    fn incompatible_tiles_are_rejected() {
        let model = MemModel::default();
        let cfg = PackConfig::for_activations(4);
        assert!(chunked_layout_pattern(&cfg, 6, 6, 128, ChunkedOptions::default(), &model).is_err());
        assert!(chunked_layout_pattern(&cfg, 6, 4, 200, ChunkedOptions::default(), &model).is_err());
    }

    #[test]
    fn spec_json_parses() {
        let s: LayoutSpec =
            serde_json::from_str(r#"{"kind":"chunked","bits":6,"dims":{"bm":2,"bk":512},"chunk":{"m":2,"k":128}}"#)
                .unwrap();
        let r = run(&s.pattern(&MemModel::default()).unwrap());
        assert_eq!(r.bank_conflicts, 0);
        let s: LayoutSpec = serde_json::from_str(r#"{"kind":"naive","bits":16,"dims":{"rows":4,"cols":8}}"#).unwrap();
        assert_eq!(run(&s.pattern(&MemModel::default()).unwrap()).utilization, 1.0);
    }
}
