mod common;

use flexq_core::bitgemm::{config_for, prepare, quantized_gemm};
use flexq_core::{
    dequantize, execute_tiled, group_matmul_fused, int_matmul_reference, quantize, Error, FloatTensor, GemmConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_quant, same_bits};

fn float_matmul(x: &FloatTensor, w: &FloatTensor) -> Vec<f64> {
    let mut y = Vec::new();
    for m in 0..x.rows() {
        for n in 0..w.rows() {
            y.push((0..x.cols()).map(|k| f64::from(x.get(m, k)) * f64::from(w.get(n, k))).sum());
        }
    }
    y
}

#[test]
fn engine_matches_dequantized_float_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (m, n, k) in [(1, 64, 512), (5, 17, 300), (16, 40, 1000)] {
        let w = FloatTensor::from_fn(n, k, |_, _| rng.random_range(-0.1f32..0.1));
        let x = FloatTensor::from_fn(m, k, |_, _| rng.random_range(-4.0f32..4.0));
        let (wq, xq) = (quantize(&w, 6, 128).unwrap(), quantize(&x, 8, 128).unwrap());
        let expect = float_matmul(&dequantize(&xq), &dequantize(&wq));
        let out = quantized_gemm(&wq, &xq, &config_for(&wq, &xq)).unwrap();
        for (a, b) in out.data.iter().zip(&expect) {
            assert!((f64::from(*a) - b).abs() <= 1e-4 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn zero_operand_gives_zero_output() {
    let w = quantize(&FloatTensor::from_fn(24, 256, |r, c| (r * c) as f32 % 7.0 - 3.0), 6, 128).unwrap();
    let x = quantize(&FloatTensor::zeros(3, 256), 6, 128).unwrap();
    let out = quantized_gemm(&w, &x, &config_for(&w, &x)).unwrap();
    assert!(out.data.iter().all(|v| *v == 0.0));
}

#[test]
fn fused_and_tiled_agree_with_oracle_for_both_word_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (m, n, k, gs) in [(1, 8, 128, 128), (3, 33, 257, 64), (8, 70, 1500, 128), (12, 9, 700, 96)] {
        let wq = random_quant(&mut rng, n, k, 6, gs);
        let xq = random_quant(&mut rng, m, k, 8, gs);
        let cfg = GemmConfig::new(m, n, k, 6, 8).with_group_size(gs).with_trace(true);
        let oracle = int_matmul_reference(&wq, &xq, &cfg).unwrap();
        for word_bits in [32, 64] {
            let ops = prepare(&wq, &xq, word_bits).unwrap();
            let fused = group_matmul_fused(&ops.weights, &ops.activations, &ops.w_scales, &ops.x_scales, &cfg).unwrap();
            let tiled = execute_tiled(&ops.weights, &ops.activations, &ops.w_scales, &ops.x_scales, &cfg).unwrap();
            assert!(same_bits(&fused.data, &oracle.data));
            assert!(same_bits(&tiled.data, &oracle.data));
            assert_eq!(fused.trace, oracle.trace);
            assert_eq!(tiled.trace, oracle.trace);
            assert_eq!(fused.stats, tiled.stats);
        }
    }
}

#[test]
fn gemv_pass_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let wq = random_quant(&mut rng, 64, 1024, 6, 128);
    let xq = random_quant(&mut rng, 1, 1024, 6, 128);
    let out = quantized_gemm(&wq, &xq, &config_for(&wq, &xq)).unwrap();
    // 8 weight chunks x 1 activation chunk x 8 groups x 36 plane pairs.
    assert_eq!(out.stats.bmma_passes, 8 * 8 * 36);
}

#[test]
fn tile_shapes_must_align_with_chunks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let wq = random_quant(&mut rng, 16, 256, 6, 128);
    let xq = random_quant(&mut rng, 8, 256, 6, 128);
    let ops = prepare(&wq, &xq, 64).unwrap();
    let cfg = config_for(&wq, &xq).with_tiles(8, 12, 128);
    let r = execute_tiled(&ops.weights, &ops.activations, &ops.w_scales, &ops.x_scales, &cfg);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn mismatched_group_sizes_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let wq = random_quant(&mut rng, 8, 256, 6, 128);
    let xq = random_quant(&mut rng, 2, 256, 6, 64);
    assert!(matches!(prepare(&wq, &xq, 64), Err(Error::Shape(_))));
}
