//! Bit-serial GEMM over packed two's-complement bit planes.
//!
//! For a p-bit weight matrix and q-bit activation matrix the engine runs
//! `p · q` binary AND + popcount passes per chunk pair and K segment, weights
//! each pass by the product of plane coefficients, and dequantizes every
//! scale group as soon as its integer partial is complete.

mod bmma;
mod config;
mod fold;
mod fused;
mod kernel;
mod reference;
mod tiled;

pub use bmma::{bmma_chunk, reduce_bits, BitProductGrid};
pub use config::GemmConfig;
pub use fold::{fold_chunk_level, FoldOutcome};
pub use fused::{group_matmul_fused, GemmOutput, GemmStats};
pub use reference::int_matmul_reference;
pub use tiled::execute_tiled;

use crate::bitpack::{decompose, pack, PackConfig, PackedTensor};
use crate::quantizer::{GroupAxis, QuantTensor};
use crate::{Error, Result};

/// Quantized operands packed for the engine, with their group scales.
#[derive(Debug, Clone)]
pub struct PreparedOperands {
    pub weights: PackedTensor,
    pub activations: PackedTensor,
    pub w_scales: Vec<f32>,
    pub x_scales: Vec<f32>,
}

/// Packs `W[N, K]` and `X[M, K]` with the default chunk geometry.
pub fn prepare(wq: &QuantTensor, xq: &QuantTensor, word_bits: usize) -> Result<PreparedOperands> {
    for (name, t) in [("weights", wq), ("activations", xq)] {
        if t.group_axis() != GroupAxis::Cols {
            return Err(Error::Shape(format!("{name} must be grouped along their columns")));
        }
    }
    if wq.group_size() != xq.group_size() {
        return Err(Error::Shape(format!(
            "weights use group size {} and activations {}",
            wq.group_size(),
            xq.group_size()
        )));
    }
    let weights = pack(&decompose(wq), &PackConfig::for_weights().with_word_bits(word_bits))?;
    let activations = pack(&decompose(xq), &PackConfig::for_activations(xq.rows()).with_word_bits(word_bits))?;
    Ok(PreparedOperands { weights, activations, w_scales: wq.scales().to_vec(), x_scales: xq.scales().to_vec() })
}

/// Config matching two quantized operands `W[N, K]`, `X[M, K]`.
pub fn config_for(wq: &QuantTensor, xq: &QuantTensor) -> GemmConfig {
    GemmConfig::new(xq.rows(), wq.rows(), wq.cols(), wq.bits(), xq.bits()).with_group_size(wq.group_size())
}

/// Packs both operands and runs the tiled engine.
pub fn quantized_gemm(wq: &QuantTensor, xq: &QuantTensor, cfg: &GemmConfig) -> Result<GemmOutput> {
    let ops = prepare(wq, xq, 64)?;
    execute_tiled(&ops.weights, &ops.activations, &ops.w_scales, &ops.x_scales, cfg)
}
