//! Bit-serial quantized GEMM for 6-bit and 8-bit group-quantized operands.
//!
//! The pipeline is:
//!
//! 1. [`quantizer`]: symmetric per-group quantization along K (default group 128).
//! 2. [`bitpack`]: two's-complement bit-plane decomposition and the chunked
//!    `[K/chunk_k, R/chunk_m, bits, chunk_m, chunk_k/word]` packed layout.
//! 3. [`bitgemm`]: AND + popcount binary products over plane pairs, weighted by
//!    plane coefficients and dequantized per group inside the accumulation.
//!
//! [`layout_sim`] models banked shared memory and coalesced global loads to
//! account for bandwidth utilization of naive and chunked layouts, and
//! [`sensitivity`] ranks layers by quantization sensitivity to derive a
//! mixed W6A6/W6A8 policy. [`format`] holds the FLXQ container.

pub mod bitgemm;
pub mod bitpack;
mod error;
pub mod format;
pub mod layout_sim;
mod par;
pub mod quantizer;
pub mod sensitivity;

pub use error::{Error, Result};

pub use bitgemm::{
    bmma_chunk, execute_tiled, fold_chunk_level, group_matmul_fused, int_matmul_reference, reduce_bits, BitProductGrid,
    GemmConfig, GemmOutput, GemmStats,
};
pub use bitpack::{decompose, pack, plane_coeff, unpack, BitPlaneSet, PackConfig, PackedTensor};
pub use quantizer::{
    activation_bits, compute_group_scale, dequantize, quantize, BitPolicy, FloatTensor, LayerKind, QuantTensor,
};
