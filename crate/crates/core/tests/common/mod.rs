#![allow(dead_code)]

use flexq_core::quantizer::{qmax, GroupAxis, QuantTensor};
use rand::Rng;

/// Random symmetric integers with random positive scales, grouped along K.
pub fn random_quant(rng: &mut impl Rng, rows: usize, cols: usize, bits: u8, group_size: usize) -> QuantTensor {
    let limit = qmax(bits);
    let values = (0..rows * cols).map(|_| rng.random_range(-limit..=limit) as i8).collect();
    let scales = (0..rows * cols.div_ceil(group_size)).map(|_| rng.random_range(1e-3f32..2.0)).collect();
    QuantTensor::from_parts(values, rows, cols, bits, group_size, GroupAxis::Cols, scales).unwrap()
}

pub fn same_bits(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
