use crate::quantizer::QuantTensor;
use crate::{Error, Result};

/// Weight of plane `s` when reconstructing a `bits`-bit value.
///
/// Unsigned planes weigh `2^s`. Signed planes use two's complement, so the
/// most significant plane weighs `-2^(bits-1)`.
pub fn plane_coeff(s: usize, bits: u8, signed: bool) -> Result<i64> {
    if s >= usize::from(bits) {
        return Err(Error::Index { index: s, bits });
    }
    let w = 1i64 << s;
    Ok(if signed && s + 1 == usize::from(bits) { -w } else { w })
}

/// One binary matrix per bit position plus the signed coefficient of each.
///
/// Each plane row is a bitset of `ceil(cols / 64)` words; column `c` lives in
/// bit `c % 64` of word `c / 64`. Bits past `cols` are always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlaneSet {
    planes: Vec<Vec<u64>>,
    coeffs: Vec<i64>,
    bits: u8,
    signed: bool,
    rows: usize,
    cols: usize,
}

impl BitPlaneSet {
    /// Decomposes raw row-major integers. Signed values must lie in
    /// `[-2^(bits-1), 2^(bits-1)-1]` and unsigned ones in `[0, 2^bits-1]`.
    pub fn from_values(values: &[i32], rows: usize, cols: usize, bits: u8, signed: bool) -> Result<Self> {
        let min_bits = if signed { 2 } else { 1 };
        if !(min_bits..=16).contains(&bits) {
            return Err(Error::InvalidInput(format!("cannot decompose into {bits} planes")));
        }
        if values.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for {rows}x{cols}", values.len())));
        }
        let (lo, hi) = if signed { (-(1i32 << (bits - 1)), (1i32 << (bits - 1)) - 1) } else { (0, (1i32 << bits) - 1) };
        if let Some(v) = values.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "value {v} not representable in {bits} {} bits",
                if signed { "signed" } else { "unsigned" }
            )));
        }

        let row_words = cols.div_ceil(64);
        let mask = (1u32 << bits) - 1;
        let mut planes = vec![vec![0u64; rows * row_words]; usize::from(bits)];
        for r in 0..rows {
            for c in 0..cols {
                let enc = (values[r * cols + c] as u32) & mask;
                for (s, plane) in planes.iter_mut().enumerate() {
                    if enc >> s & 1 == 1 {
                        plane[r * row_words + c / 64] |= 1u64 << (c % 64);
                    }
                }
            }
        }
        let coeffs = (0..usize::from(bits)).map(|s| plane_coeff(s, bits, signed)).collect::<Result<_>>()?;
        Ok(Self { planes, coeffs, bits, signed, rows, cols })
    }

    /// Assembles a plane set from per-plane bitset rows, as produced by
    /// [`BitPlaneSet::plane_row`].
    pub(crate) fn from_plane_rows(
        planes: Vec<Vec<u64>>,
        bits: u8,
        signed: bool,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        let coeffs = (0..usize::from(bits)).map(|s| plane_coeff(s, bits, signed)).collect::<Result<_>>()?;
        Ok(Self { planes, coeffs, bits, signed, rows, cols })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn coeffs(&self) -> &[i64] {
        &self.coeffs
    }

    pub fn row_words(&self) -> usize {
        self.cols.div_ceil(64)
    }

    pub fn plane_row(&self, s: usize, row: usize) -> &[u64] {
        let rw = self.row_words();
        &self.planes[s][row * rw..(row + 1) * rw]
    }

    #[inline]
    pub fn bit(&self, s: usize, row: usize, col: usize) -> u8 {
        (self.plane_row(s, row)[col / 64] >> (col % 64) & 1) as u8
    }

    /// `sum_s coeff[s] * plane[s]`, row-major.
    pub fn recompose(&self) -> Vec<i32> {
        let mut out = vec![0i32; self.rows * self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[r * self.cols + c] =
                    (0..usize::from(self.bits)).map(|s| self.coeffs[s] as i32 * i32::from(self.bit(s, r, c))).sum();
            }
        }
        out
    }
}

/// Two's-complement planes of a quantized tensor's values.
pub fn decompose(q: &QuantTensor) -> BitPlaneSet {
    let values: Vec<i32> = q.values().iter().map(|&v| i32::from(v)).collect();
    BitPlaneSet::from_values(&values, q.rows(), q.cols(), q.bits(), true)
        .expect("quantized values always fit their bit-width")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{quantize, FloatTensor};
    use proptest::prelude::*;

    #[test]
    fn coefficients() {
        assert_eq!(plane_coeff(0, 6, true).unwrap(), 1);
        assert_eq!(plane_coeff(5, 6, true).unwrap(), -32);
        assert_eq!(plane_coeff(3, 4, false).unwrap(), 8);
        assert!(matches!(plane_coeff(6, 6, true), Err(Error::Index { index: 6, bits: 6 })));
    }

    #[test]
    fn unsigned_three_in_two_bits() {
        let bp = BitPlaneSet::from_values(&[3], 1, 1, 2, false).unwrap();
        assert_eq!(bp.bit(0, 0, 0), 1);
        assert_eq!(bp.bit(1, 0, 0), 1);
        assert_eq!(bp.coeffs(), &[1, 2]);
        assert_eq!(bp.recompose(), vec![3]);
    }

    #[test]
    fn minus_one_sets_every_plane() {
        let bp = BitPlaneSet::from_values(&[-1], 1, 1, 6, true).unwrap();
        assert!((0..6).all(|s| bp.bit(s, 0, 0) == 1));
        assert_eq!(bp.coeffs(), &[1, 2, 4, 8, 16, -32]);
        assert_eq!(bp.recompose(), vec![-1]);
    }

    #[test]
    fn zero_clears_every_plane() {
        let bp = BitPlaneSet::from_values(&[0, 0], 1, 2, 6, true).unwrap();
        assert!((0..6).all(|s| bp.plane_row(s, 0).iter().all(|&w| w == 0)));
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        assert!(BitPlaneSet::from_values(&[32], 1, 1, 6, true).is_err());
        assert!(BitPlaneSet::from_values(&[-33], 1, 1, 6, true).is_err());
        assert!(BitPlaneSet::from_values(&[-1], 1, 1, 4, false).is_err());
        assert!(BitPlaneSet::from_values(&[16], 1, 1, 4, false).is_err());
    }

    proptest! {
        #[test]
        fn signed_reconstruction_is_exact(
            bits in 2u8..=8,
            rows in 1usize..4,
            cols in 1usize..150,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let lo = -(1i32 << (bits - 1));
            let hi = (1i32 << (bits - 1)) - 1;
            let values: Vec<i32> = (0..rows * cols).map(|_| rng.random_range(lo..=hi)).collect();
            let bp = BitPlaneSet::from_values(&values, rows, cols, bits, true).unwrap();
            prop_assert_eq!(bp.recompose(), values);
        }

        #[test]
        fn decompose_recomposes_quant_tensor(seed in any::<u64>(), bits in 2u8..=8) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = FloatTensor::from_fn(3, 140, |_, _| rng.random_range(-4.0f32..4.0));
            let q = quantize(&t, bits, 64).unwrap();
            let back: Vec<i8> = decompose(&q).recompose().into_iter().map(|v| v as i8).collect();
            prop_assert_eq!(back.as_slice(), q.values());
        }
    }
}
