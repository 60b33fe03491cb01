//! Bit-plane decomposition and the chunked packed layout.

mod pack;
mod planes;

pub use pack::{pack, unpack, PackConfig, PackedTensor};
pub use planes::{decompose, plane_coeff, BitPlaneSet};
