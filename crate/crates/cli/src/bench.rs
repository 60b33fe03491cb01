//! Shape-suite timing and the exhaustive tile-parameter sweep.

use std::time::Instant;

use flexq_core::bitgemm::prepare;
use flexq_core::quantizer::{qmax, GroupAxis, QuantTensor};
use flexq_core::{execute_tiled, GemmConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::{manifest_path_for, resolve_output, Run};
use crate::{BenchArgs, Suite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub name: String,
    pub shape: Shape,
    pub p: u8,
    pub q: u8,
    pub group_size: usize,
    pub bm: usize,
    pub bn: usize,
    pub bk: usize,
    pub stages: usize,
    pub workers: usize,
    /// Fastest of the repetitions.
    pub wall_ns: u64,
    pub bmma_passes: u64,
    pub effective_gops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub suite: String,
    pub quick: bool,
    pub reps: usize,
    pub results: Vec<BenchRecord>,
    /// Sweep winner; absent for shape suites.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<BenchRecord>,
}

/// Projection shapes `(name, N, K)` of a large GLU decoder block (hidden
/// 8192, intermediate 28672) divided by 8, or by 32 for quick runs.
fn llama_shapes(quick: bool) -> Vec<(&'static str, usize, usize)> {
    let d = if quick { 32 } else { 8 };
    let mut shapes = vec![
        ("qkv_proj", 10240 / d, 8192 / d),
        ("o_proj", 8192 / d, 8192 / d),
        ("gate_up_proj", 28672 / d, 8192 / d),
        ("down_proj", 8192 / d, 28672 / d),
    ];
    if !quick {
        shapes.push(("gemv_4096", 4096, 4096));
    }
    shapes
}

fn random_quant(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bits: u8) -> QuantTensor {
    let limit = qmax(bits);
    let values = (0..rows * cols).map(|_| rng.random_range(-limit..=limit) as i8).collect();
    let scales = (0..rows * cols.div_ceil(128)).map(|_| rng.random_range(0.01f32..1.0)).collect();
    QuantTensor::from_parts(values, rows, cols, bits, 128, GroupAxis::Cols, scales).expect("valid random tensor")
}

struct Problem {
    ops: flexq_core::bitgemm::PreparedOperands,
    shape: Shape,
    p: u8,
    q: u8,
}

fn problem(shape: Shape, p: u8, q: u8) -> CliResult<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64((shape.m * 31 + shape.n * 7 + shape.k) as u64 ^ u64::from(q));
    let wq = random_quant(&mut rng, shape.n, shape.k, p);
    let xq = random_quant(&mut rng, shape.m, shape.k, q);
    Ok(Problem { ops: prepare(&wq, &xq, 64)?, shape, p, q })
}

fn time(name: &str, pr: &Problem, cfg: &GemmConfig, reps: usize) -> CliResult<BenchRecord> {
    let mut best = u64::MAX;
    let mut passes = 0;
    for _ in 0..reps.max(1) {
        let clock = Instant::now();
        let out = execute_tiled(&pr.ops.weights, &pr.ops.activations, &pr.ops.w_scales, &pr.ops.x_scales, cfg)?;
        best = best.min(clock.elapsed().as_nanos() as u64);
        passes = out.stats.bmma_passes;
    }
    let Shape { m, n, k } = pr.shape;
    Ok(BenchRecord {
        name: name.to_string(),
        shape: pr.shape,
        p: pr.p,
        q: pr.q,
        group_size: cfg.group_size,
        bm: cfg.bm,
        bn: cfg.bn,
        bk: cfg.bk,
        stages: cfg.pipeline_stages,
        workers: cfg.worker_count,
        wall_ns: best,
        bmma_passes: passes,
        effective_gops: 2.0 * (m * n * k) as f64 / best.max(1) as f64,
    })
}

/// Highest throughput wins; equal throughput goes to the smallest
/// `(bm, bn, bk)`.
pub fn select_best(records: &[BenchRecord]) -> Option<&BenchRecord> {
    records.iter().reduce(|best, r| {
        let better = r.effective_gops > best.effective_gops
            || (r.effective_gops == best.effective_gops && (r.bm, r.bn, r.bk) < (best.bm, best.bn, best.bk));
        if better {
            r
        } else {
            best
        }
    })
}

fn sweep_candidates(shape: Shape) -> Vec<(usize, usize, usize)> {
    let chunk_m = shape.m.min(8);
    let padded_k = shape.k.div_ceil(128) * 128;
    let mut out = Vec::new();
    for bm in [chunk_m, 2 * chunk_m] {
        for bn in [8, 32, 64, 128] {
            for bk in [128, 256, 512, 1024].into_iter().filter(|&bk| bk <= padded_k) {
                out.push((bm, bn, bk));
            }
        }
    }
    out
}

pub fn run(a: &BenchArgs) -> CliResult<()> {
    let mut run = Run::start("bench", a);
    let workers = if a.workers == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { a.workers };
    if a.stages == 0 {
        return Err(CliError::usage("--stages must be at least 1"));
    }
    let reps = if a.quick { 1 } else { a.reps };
    let mut results = Vec::new();
    let mut best = None;

    match a.suite {
        Suite::LlamaShapes => {
            for (name, n, k) in llama_shapes(a.quick) {
                for m in [1, 4, 8] {
                    if name == "gemv_4096" && m != 1 {
                        continue;
                    }
                    for q in [6, 8] {
                        let pr = problem(Shape { m, n, k }, 6, q)?;
                        let cfg = GemmConfig::new(m, n, k, 6, q).with_pipeline(a.stages, workers);
                        results.push(time(name, &pr, &cfg, reps)?);
                    }
                }
            }
        }
        Suite::Sweep => {
            let shape = if a.quick { Shape { m: 8, n: 256, k: 512 } } else { Shape { m: 8, n: 1024, k: 1024 } };
            let pr = problem(shape, 6, 6)?;
            for (bm, bn, bk) in sweep_candidates(shape) {
                let cfg = GemmConfig::new(shape.m, shape.n, shape.k, 6, 6)
                    .with_tiles(bm, bn, bk)
                    .with_pipeline(a.stages, workers);
                results.push(time("sweep", &pr, &cfg, reps)?);
            }
            best = select_best(&results).cloned();
        }
    }

    let report = BenchReport {
        suite: match a.suite {
            Suite::LlamaShapes => "llama-shapes".into(),
            Suite::Sweep => "sweep".into(),
        },
        quick: a.quick,
        reps,
        results,
        best,
    };
    match &a.json {
        Some(p) => {
            let p = resolve_output(p);
            run.write_json_output(&p, &report)?;
            run.finish(&manifest_path_for(&p, false))?;
        }
        None => crate::commands::emit(&serde_json::to_string_pretty(&report)?)?,
    }
    Ok(())
}
