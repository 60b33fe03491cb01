use serde::{Deserialize, Serialize};

use crate::bitpack::PackConfig;
use crate::quantizer::{check_bits, DEFAULT_GROUP_SIZE};
use crate::{Error, Result};

/// Problem shape, precision pair, and execution parameters.
///
/// `Y[M, N] = X[M, K] · W[N, K]ᵀ` with `weight_bits` (p) and
/// `activation_bits` (q). Tiles are `bm × bn` outputs by `bk` along K.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmConfig {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub weight_bits: u8,
    pub activation_bits: u8,
    pub group_size: usize,
    pub bm: usize,
    pub bn: usize,
    pub bk: usize,
    pub pipeline_stages: usize,
    pub worker_count: usize,
    /// Record per-group integer partials in [`GemmOutput::trace`](super::GemmOutput).
    #[serde(default)]
    pub trace: bool,
}

impl GemmConfig {
    pub fn new(m: usize, n: usize, k: usize, weight_bits: u8, activation_bits: u8) -> Self {
        let chunk_m = PackConfig::for_activations(m).chunk_m;
        Self {
            m,
            n,
            k,
            weight_bits,
            activation_bits,
            group_size: DEFAULT_GROUP_SIZE,
            bm: (8 / chunk_m).max(1) * chunk_m,
            bn: 64,
            bk: 512,
            pipeline_stages: 2,
            worker_count: 1,
            trace: false,
        }
    }

    pub fn with_group_size(mut self, group_size: usize) -> Self {
        self.group_size = group_size;
        self
    }

    pub fn with_tiles(mut self, bm: usize, bn: usize, bk: usize) -> Self {
        (self.bm, self.bn, self.bk) = (bm, bn, bk);
        self
    }

    pub fn with_pipeline(mut self, stages: usize, workers: usize) -> Self {
        (self.pipeline_stages, self.worker_count) = (stages, workers);
        self
    }

    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }

    /// W6A6 and W6A8 are the production pairs; other widths in 2..=8 are
    /// accepted for testing.
    pub fn is_production_pair(&self) -> bool {
        self.weight_bits == 6 && matches!(self.activation_bits, 6 | 8)
    }

    pub fn groups(&self) -> usize {
        self.k.div_ceil(self.group_size).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.weight_bits)?;
        check_bits(self.activation_bits)?;
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(Error::Config(format!("empty problem {}x{}x{}", self.m, self.n, self.k)));
        }
        if self.group_size == 0 {
            return Err(Error::Config("group size must be positive".into()));
        }
        if self.pipeline_stages == 0 || self.worker_count == 0 {
            return Err(Error::Config("pipeline_stages and worker_count must be >= 1".into()));
        }
        if self.bm == 0 || self.bn == 0 || self.bk == 0 {
            return Err(Error::Config("tile dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = GemmConfig::new(16, 64, 512, 6, 8);
        assert_eq!((c.bm, c.bn, c.bk, c.group_size), (8, 64, 512, 128));
        assert!(c.is_production_pair());
        assert_eq!(GemmConfig::new(1, 8, 128, 6, 6).bm, 8);
        assert_eq!(GemmConfig::new(3, 8, 128, 6, 6).bm, 6);
        assert!(!GemmConfig::new(1, 8, 128, 4, 4).is_production_pair());
        assert_eq!(GemmConfig::new(1, 1, 300, 6, 6).groups(), 3);
    }

    #[test]
    fn validation() {
        assert!(GemmConfig::new(1, 1, 128, 6, 9).validate().is_err());
        assert!(GemmConfig::new(0, 1, 128, 6, 6).validate().is_err());
        assert!(GemmConfig::new(1, 1, 128, 6, 6).with_pipeline(0, 1).validate().is_err());
        assert!(GemmConfig::new(1, 1, 128, 6, 6).with_group_size(0).validate().is_err());
        GemmConfig::new(1, 1, 128, 2, 8).validate().unwrap();
    }
}
