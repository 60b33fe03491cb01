//! Acceptance gate. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; exits non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use flexq_core::bitgemm::prepare;
use flexq_core::layout_sim::{chunked_layout_pattern, golden_check, simulate, ChunkedOptions, MemModel};
use flexq_core::quantizer::{quantize_with, GroupAxis, QuantOptions};
use flexq_core::sensitivity::fixtures::{glu_fixture, GluFixtureOptions};
use flexq_core::sensitivity::{layer_error, rank_layers};
use flexq_core::{
    dequantize, execute_tiled, fold_chunk_level, group_matmul_fused, int_matmul_reference, reduce_bits, BitPlaneSet,
    BitProductGrid, FloatTensor, GemmConfig, LayerKind, PackConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};

use common::{random_quant, same_bits};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fused_matches_reference(
    rng: &mut ChaCha8Rng,
    m: usize,
    n: usize,
    k: usize,
    p: u8,
    q: u8,
    gs: usize,
) -> Result<(), String> {
    let wq = random_quant(rng, n, k, p, gs);
    let xq = random_quant(rng, m, k, q, gs);
    let cfg = GemmConfig::new(m, n, k, p, q).with_group_size(gs).with_trace(true);
    let ops = prepare(&wq, &xq, 64).map_err(|e| e.to_string())?;
    let fused = group_matmul_fused(&ops.weights, &ops.activations, &ops.w_scales, &ops.x_scales, &cfg)
        .map_err(|e| e.to_string())?;
    let oracle = int_matmul_reference(&wq, &xq, &cfg).map_err(|e| e.to_string())?;
    if !same_bits(&fused.data, &oracle.data) || fused.trace != oracle.trace {
        return Err(format!("mismatch at M={m} N={n} K={k} W{p}A{q} g{gs}"));
    }
    Ok(())
}

fn oracle_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1E0);
    for _ in 0..1000 {
        let m = [1, 4, 8, 16][rng.random_range(0..4)];
        let n = rng.random_range(8..=256);
        let k = rng.random_range(128..=4096);
        let (p, q) = if rng.random_bool(0.5) { (6, 6) } else { (6, 8) };
        let gs = [64, 128, 256][rng.random_range(0..3)];
        fused_matches_reference(&mut rng, m, n, k, p, q, gs)?;
    }
    let mut sweep = 0;
    for p in 2..=8 {
        for q in 2..=8 {
            for _ in 0..3 {
                let m = rng.random_range(1..=12);
                let n = rng.random_range(1..=20);
                let k = rng.random_range(1..=300);
                let gs = [32, 100, 128][rng.random_range(0..3)];
                fused_matches_reference(&mut rng, m, n, k, p, q, gs)?;
                sweep += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(120) {
        return Err(format!("exact but took {elapsed:.1?} (limit 120 s)"));
    }
    Ok(format!("1000 random cases + {sweep} small-matrix sweep cases bit-exact in {elapsed:.1?}"))
}

fn expansion(values_a: &[i32], values_b: &[i32], p: u8, q: u8, signed: bool) -> Result<usize, String> {
    let w = BitPlaneSet::from_values(values_a, values_a.len(), 1, p, signed).map_err(|e| e.to_string())?;
    let x = BitPlaneSet::from_values(values_b, values_b.len(), 1, q, signed).map_err(|e| e.to_string())?;
    let grid = BitProductGrid::compute(&w, &x).map_err(|e| e.to_string())?;
    let y = reduce_bits(&grid, p, q, signed).map_err(|e| e.to_string())?;
    // y is [M = b values, N = a values].
    for (i, b) in values_b.iter().enumerate() {
        for (j, a) in values_a.iter().enumerate() {
            let got = y[i * values_a.len() + j];
            if got != i64::from(a * b) {
                return Err(format!("{a}*{b} evaluated to {got} (signed={signed})"));
            }
        }
    }
    Ok(values_a.len() * values_b.len())
}

fn bit_expansion() -> Outcome {
    let unsigned = expansion(&(0..=3).collect::<Vec<_>>(), &(0..=15).collect::<Vec<_>>(), 2, 4, false)?;
    let all6: Vec<i32> = (-32..=31).collect();
    let signed = expansion(&all6, &all6, 6, 6, true)?;
    Ok(format!("{unsigned} unsigned 2x4-bit and {signed} signed 6x6-bit products exact"))
}

fn bandwidth_golden() -> Outcome {
    let model = MemModel::default();
    let golden = golden_check(&model).map_err(|e| e.to_string())?;
    for g in &golden {
        if !g.pass {
            return Err(format!("{}: utilization {} expected {}", g.name, g.utilization, g.expected));
        }
    }
    let mut configs = 0;
    for bits in [6, 8] {
        for bm in [1, 2, 8] {
            for bk in [128, 512] {
                let cfg = PackConfig::for_activations(bm);
                let pattern = chunked_layout_pattern(&cfg, bits, bm, bk, ChunkedOptions::default(), &model)
                    .map_err(|e| e.to_string())?;
                let report = simulate(&pattern, &model).map_err(|e| e.to_string())?;
                if report.bank_conflicts != 0 {
                    return Err(format!("chunked {bits}-bit BM={bm} BK={bk}: {} conflicts", report.bank_conflicts));
                }
                configs += 1;
            }
        }
    }
    let summary: Vec<String> = golden.iter().map(|g| format!("{}={}", g.name, g.utilization)).collect();
    Ok(format!("{}; chunked layout conflict-free in {configs}/{configs} configs", summary.join(" ")))
}

fn ulp(v: f32) -> f64 {
    let v = v.abs();
    f64::from(f32::from_bits(v.to_bits() + 1)) - f64::from(v)
}

fn quantization_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9B0D);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let heavy = StudentT::new(2.0f32).unwrap();
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let len = rng.random_range(1..=256);
        let magnitude = 10f32.powi(rng.random_range(-6..=6));
        let data: Vec<f32> = (0..len)
            .map(|_| {
                let v = match i % 3 {
                    0 => normal.sample(&mut rng),
                    1 => heavy.sample(&mut rng),
                    _ => rng.random_range(-1.0f32..1.0),
                };
                v * magnitude
            })
            .collect();
        let bits = [6, 8, 2, 4][i % 4];
        let x = FloatTensor::new(data, 1, len).unwrap();
        let opts = QuantOptions { axis: GroupAxis::Cols, ..QuantOptions::new(bits, len) };
        let q = quantize_with(&x, &opts).map_err(|e| e.to_string())?;
        let s = q.scales()[0];
        let dq = dequantize(&q);
        for (a, b) in x.data().iter().zip(dq.data()) {
            let err = (f64::from(*a) - f64::from(*b)).abs();
            let bound = f64::from(s) / 2.0 + 4.0 * ulp(a.abs().max(s));
            if err > bound {
                return Err(format!("group {i}: |{a} - {b}| = {err:e} > {bound:e} (scale {s})"));
            }
            worst = worst.max(err / f64::from(s));
        }
    }
    Ok(format!("10000 groups within scale/2 + 4 ULP (worst error {worst:.6} x scale)"))
}

fn plane_economy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3648);
    let mut lines = Vec::new();
    for (q, expect) in [(6u8, 36u64), (8, 48)] {
        for (m, n, k) in [(1, 8, 128), (4, 64, 512), (16, 24, 1024), (8, 8, 4096)] {
            let wq = random_quant(&mut rng, n, k, 6, 128);
            let xq = random_quant(&mut rng, m, k, q, 128);
            let cfg = GemmConfig::new(m, n, k, 6, q);
            let ops = prepare(&wq, &xq, 64).map_err(|e| e.to_string())?;
            let out = group_matmul_fused(&ops.weights, &ops.activations, &ops.w_scales, &ops.x_scales, &cfg)
                .map_err(|e| e.to_string())?;
            let triples = (ops.activations.row_chunks() * ops.weights.row_chunks() * cfg.groups()) as u64;
            let s = out.stats;
            if s.chunk_pair_segments != triples || s.bmma_passes != expect * triples {
                return Err(format!(
                    "W6A{q} {m}x{n}x{k}: {} passes over {} chunk-pair-groups (expected {expect} per)",
                    s.bmma_passes, s.chunk_pair_segments
                ));
            }
        }
        lines.push(format!("W6A{q}: {expect}"));
    }
    Ok(format!("passes per chunk-pair-group {}", lines.join(", ")))
}

fn pipeline_determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD37E);
    for case in 0..50 {
        let m = [1, 3, 8, 16][rng.random_range(0..4)];
        let n = rng.random_range(1..=200);
        let k = rng.random_range(1..=2000);
        let (p, q) = if case % 2 == 0 { (6, 6) } else { (6, 8) };
        let gs = [64, 128][rng.random_range(0..2)];
        let wq = random_quant(&mut rng, n, k, p, gs);
        let xq = random_quant(&mut rng, m, k, q, gs);
        let ops = prepare(&wq, &xq, 64).map_err(|e| e.to_string())?;
        let base = GemmConfig::new(m, n, k, p, q).with_group_size(gs);
        let bn = 8 * rng.random_range(1..=4);
        let bk = 128 * rng.random_range(1..=4);
        let mut first: Option<Vec<f32>> = None;
        for workers in [1, 2, 8] {
            for stages in [1, 2, 4] {
                let cfg = base.clone().with_tiles(base.bm, bn, bk).with_pipeline(stages, workers);
                let out = execute_tiled(&ops.weights, &ops.activations, &ops.w_scales, &ops.x_scales, &cfg)
                    .map_err(|e| e.to_string())?;
                match &first {
                    None => first = Some(out.data),
                    Some(f) if same_bits(f, &out.data) => {}
                    Some(_) => {
                        return Err(format!(
                            "problem {case} ({m}x{n}x{k}) differs at workers={workers} stages={stages}"
                        ))
                    }
                }
            }
        }
    }
    Ok("50 problems identical across workers {1,2,8} x stages {1,2,4}".into())
}

fn sensitivity_ranking() -> Outcome {
    let opts = GluFixtureOptions::default();
    let (mut first, mut monotone) = (0, 0);
    for seed in 0..100 {
        let dumps = glu_fixture(seed, &opts).map_err(|e| e.to_string())?;
        let report = rank_layers(&dumps, 6, 6, 128).map_err(|e| e.to_string())?;
        if report.layer(&report.ranking[0]).map(|l| l.kind) == Some(LayerKind::DownProj) {
            first += 1;
        }
        let mut ok = true;
        for d in &dumps {
            let a6 = layer_error(d, 6, 6, 128).map_err(|e| e.to_string())?.sqnr_db;
            let a8 = layer_error(d, 6, 8, 128).map_err(|e| e.to_string())?.sqnr_db;
            ok &= a8 >= a6;
        }
        monotone += usize::from(ok);
    }
    let msg = format!("down_proj first in {first}/100 seeds; SQNR(a8) >= SQNR(a6) in {monotone}/100");
    if first >= 95 && monotone == 100 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn fold_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF01D);
    let mut pairs = 0;
    for mma_m in [1usize, 2, 4, 8] {
        for chunk_m in [1usize, 2, 4, 8].into_iter().filter(|&c| c <= mma_m) {
            for width in [1, 3, 8] {
                let lanes: Vec<i64> = (0..mma_m * width).map(|_| rng.random_range(-1_000_000..1_000_000)).collect();
                let out = fold_chunk_level(&lanes, chunk_m, mma_m).map_err(|e| e.to_string())?;
                let mut direct = vec![0i64; chunk_m * width];
                for lane in 0..mma_m {
                    for w in 0..width {
                        direct[(lane % chunk_m) * width + w] += lanes[lane * width + w];
                    }
                }
                let rounds = mma_m.ilog2() - chunk_m.ilog2();
                if out.sums != direct || out.rounds != rounds {
                    return Err(format!(
                        "chunk_m={chunk_m} mma_m={mma_m}: {} rounds (expected {rounds}), sums match: {}",
                        out.rounds,
                        out.sums == direct
                    ));
                }
            }
            pairs += 1;
        }
    }
    Ok(format!("{pairs} (chunk_m, mma_m) pairs match direct sums with log2 round counts"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("oracle exactness", oracle_exactness),
        ("bit expansion", bit_expansion),
        ("bandwidth golden triple", bandwidth_golden),
        ("quantization bound", quantization_bound),
        ("plane-count economy", plane_economy),
        ("pipeline determinism", pipeline_determinism),
        ("sensitivity ranking", sensitivity_ranking),
        ("fold correctness", fold_correctness),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
