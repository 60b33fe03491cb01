//! Built-in correctness suites for `flexq verify`.

use std::path::Path;

use flexq_core::bitgemm::prepare;
use flexq_core::format::decode;
use flexq_core::layout_sim::{chunked_layout_pattern, golden_check, simulate, ChunkedOptions, MemModel};
use flexq_core::quantizer::{qmax, GroupAxis, QuantTensor};
use flexq_core::sensitivity::fixtures::{glu_fixture, GluFixtureOptions};
use flexq_core::sensitivity::{layer_error, rank_layers};
use flexq_core::{
    decompose, execute_tiled, group_matmul_fused, int_matmul_reference, pack, unpack, GemmConfig, LayerKind, PackConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::commands::emit;
use crate::error::{CliError, CliResult};
use crate::VerifyArgs;

type Check = Result<String, String>;
type Suite<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn random_quant(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bits: u8, gs: usize) -> QuantTensor {
    let limit = qmax(bits);
    let values = (0..rows * cols).map(|_| rng.random_range(-limit..=limit) as i8).collect();
    let scales = (0..rows * cols.div_ceil(gs)).map(|_| rng.random_range(1e-3f32..2.0)).collect();
    QuantTensor::from_parts(values, rows, cols, bits, gs, GroupAxis::Cols, scales).expect("valid random tensor")
}

fn bits_eq(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn oracle_case(rng: &mut ChaCha8Rng, m: usize, n: usize, k: usize, p: u8, q: u8, gs: usize) -> Result<(), String> {
    let wq = random_quant(rng, n, k, p, gs);
    let xq = random_quant(rng, m, k, q, gs);
    let cfg = GemmConfig::new(m, n, k, p, q).with_group_size(gs);
    let ops = prepare(&wq, &xq, 64).map_err(|e| e.to_string())?;
    let fused = group_matmul_fused(&ops.weights, &ops.activations, &ops.w_scales, &ops.x_scales, &cfg)
        .map_err(|e| e.to_string())?;
    let tiled =
        execute_tiled(&ops.weights, &ops.activations, &ops.w_scales, &ops.x_scales, &cfg).map_err(|e| e.to_string())?;
    let oracle = int_matmul_reference(&wq, &xq, &cfg).map_err(|e| e.to_string())?;
    if bits_eq(&fused.data, &oracle.data) && bits_eq(&tiled.data, &oracle.data) {
        Ok(())
    } else {
        Err(format!("engine differs from reference at {m}x{n}x{k} W{p}A{q} group {gs}"))
    }
}

fn oracle_equivalence(full: bool) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut cases = 0;
    for i in 0..40 {
        let m = [1, 4, 8, 16][i % 4];
        let n = rng.random_range(8..=128);
        let k = rng.random_range(128..=1024);
        let q = if i % 2 == 0 { 6 } else { 8 };
        oracle_case(&mut rng, m, n, k, 6, q, 128)?;
        cases += 1;
    }
    if full {
        for p in 2..=8 {
            for q in 2..=8 {
                for _ in 0..4 {
                    let (m, n, k) = (rng.random_range(1..=12), rng.random_range(1..=24), rng.random_range(1..=400));
                    let gs = [32, 128][rng.random_range(0..2)];
                    oracle_case(&mut rng, m, n, k, p, q, gs)?;
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("{cases} cases bit-exact"))
}

fn packing_bijection() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut cases = 0;
    for bits in 2..=8 {
        for word_bits in [32, 64] {
            let (rows, cols) = (rng.random_range(1..=20), rng.random_range(1..=400));
            let q = random_quant(&mut rng, rows, cols, bits, 128);
            let planes = decompose(&q);
            for cfg in [PackConfig::for_weights(), PackConfig::for_activations(rows)] {
                let cfg = cfg.with_word_bits(word_bits);
                let packed = pack(&planes, &cfg).map_err(|e| e.to_string())?;
                let back = unpack(&packed, &cfg).map_err(|e| e.to_string())?;
                let values: Vec<i32> = q.values().iter().map(|&v| i32::from(v)).collect();
                if back != planes || back.recompose() != values {
                    return Err(format!(
                        "{bits}-bit {rows}x{cols} does not survive pack/unpack ({word_bits}-bit words)"
                    ));
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} pack/unpack round trips"))
}

fn layout_golden() -> Check {
    let model = MemModel::default();
    let golden = golden_check(&model).map_err(|e| e.to_string())?;
    if let Some(g) = golden.iter().find(|g| !g.pass) {
        return Err(format!("{} utilization {} (expected {})", g.name, g.utilization, g.expected));
    }
    for bits in [6, 8] {
        for bm in [1, 2, 8] {
            for bk in [128, 512] {
                let pattern = chunked_layout_pattern(
                    &PackConfig::for_activations(bm),
                    bits,
                    bm,
                    bk,
                    ChunkedOptions::default(),
                    &model,
                )
                .map_err(|e| e.to_string())?;
                let r = simulate(&pattern, &model).map_err(|e| e.to_string())?;
                if r.bank_conflicts != 0 {
                    return Err(format!("chunked {bits}-bit BM={bm} BK={bk}: {} conflicts", r.bank_conflicts));
                }
            }
        }
    }
    let figures: Vec<String> = golden.iter().map(|g| format!("{}={}", g.name, g.utilization)).collect();
    Ok(format!("{}; chunked layouts conflict-free", figures.join(" ")))
}

fn sensitivity_fixture() -> Check {
    let seeds = 20;
    let (mut first, mut monotone) = (0, 0);
    for seed in 0..seeds {
        let dumps = glu_fixture(seed, &GluFixtureOptions::default()).map_err(|e| e.to_string())?;
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
        monotone += u64::from(ok);
    }
    let msg = format!("down_proj first in {first}/{seeds} seeds, 8-bit activations help in {monotone}/{seeds}");
    if first * 100 >= 95 * seeds && monotone == seeds {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Decodes every `.flxq` file in `dir`, failing on the first format error.
fn check_fixtures(dir: &Path) -> CliResult<usize> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CliError::File { path: dir.display().to_string(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "flxq"))
        .collect();
    paths.sort();
    for p in &paths {
        let bytes = std::fs::read(p).map_err(|e| CliError::File { path: p.display().to_string(), source: e })?;
        decode(&bytes).map_err(|e| match e {
            flexq_core::Error::Format { offset, message } => {
                flexq_core::Error::Format { offset, message: format!("{}: {message}", p.display()) }
            }
            other => other,
        })?;
    }
    Ok(paths.len())
}

pub fn run(a: &VerifyArgs) -> CliResult<()> {
    if let Some(dir) = &a.fixtures {
        let n = check_fixtures(dir)?;
        emit(&format!("verify fixtures: PASS ({n} files decode)"))?;
    }
    let suites: [Suite; 4] = [
        ("oracle-equivalence", Box::new(|| oracle_equivalence(a.full))),
        ("packing-bijection", Box::new(packing_bijection)),
        ("layout-golden", Box::new(layout_golden)),
        ("sensitivity-fixture", Box::new(sensitivity_fixture)),
    ];
    let mut failed = Vec::new();
    for (name, check) in &suites {
        match check() {
            Ok(detail) => emit(&format!("verify {name}: PASS ({detail})"))?,
            Err(detail) => {
                emit(&format!("verify {name}: FAIL ({detail})"))?;
                failed.push(*name);
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed.join(", ")))
    }
}
