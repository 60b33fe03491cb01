use crate::bitpack::{plane_coeff, BitPlaneSet};
use crate::{Error, Result};

/// Binary multiply-accumulate of one chunk row pair: `Σ popcount(w & x)`.
pub fn bmma_chunk(w_words: &[u64], x_words: &[u64]) -> Result<u32> {
    if w_words.len() != x_words.len() {
        return Err(Error::Shape(format!("bmma spans differ: {} vs {} words", w_words.len(), x_words.len())));
    }
    Ok(w_words.iter().zip(x_words).map(|(a, b)| (a & b).count_ones()).sum())
}

/// Binary products `Y^(s,t)[m][n] = Σ_k W^(s)[n,k] · X^(t)[m,k]` for every
/// weight plane `s` and activation plane `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitProductGrid {
    p: u8,
    q: u8,
    m: usize,
    n: usize,
    partials: Vec<u32>,
}

impl BitProductGrid {
    /// Computes every plane-pair product of two unpacked plane sets.
    pub fn compute(w: &BitPlaneSet, x: &BitPlaneSet) -> Result<Self> {
        if w.cols() != x.cols() {
            return Err(Error::Shape(format!("weight K {} != activation K {}", w.cols(), x.cols())));
        }
        let (p, q, m, n) = (w.bits(), x.bits(), x.rows(), w.rows());
        let mut partials = Vec::with_capacity(usize::from(p) * usize::from(q) * m * n);
        for s in 0..usize::from(p) {
            for t in 0..usize::from(q) {
                for r in 0..m {
                    for c in 0..n {
                        partials.push(bmma_chunk(w.plane_row(s, c), x.plane_row(t, r))?);
                    }
                }
            }
        }
        Ok(Self { p, q, m, n, partials })
    }

    pub fn weight_bits(&self) -> u8 {
        self.p
    }

    pub fn activation_bits(&self) -> u8 {
        self.q
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.m, self.n]
    }

    #[inline]
    pub fn get(&self, s: usize, t: usize, m: usize, n: usize) -> u32 {
        self.partials[((s * usize::from(self.q) + t) * self.m + m) * self.n + n]
    }
}

/// Weights each plane-pair product by `coeff_p(s) · coeff_q(t)` and sums.
/// Unsigned mode uses `2^(s+t)`. Returns the `[M, N]` integer matrix.
pub fn reduce_bits(grid: &BitProductGrid, p: u8, q: u8, signed: bool) -> Result<Vec<i64>> {
    if p != grid.p || q != grid.q {
        return Err(Error::Shape(format!("grid holds {}x{} plane pairs, reduction asked for {p}x{q}", grid.p, grid.q)));
    }
    let mut out = vec![0i64; grid.m * grid.n];
    for s in 0..usize::from(p) {
        let cw = plane_coeff(s, p, signed)?;
        for t in 0..usize::from(q) {
            let coeff = cw * plane_coeff(t, q, signed)?;
            for m in 0..grid.m {
                for n in 0..grid.n {
                    out[m * grid.n + n] += coeff * i64::from(grid.get(s, t, m, n));
                }
            }
        }
    }
    Ok(out)
}
