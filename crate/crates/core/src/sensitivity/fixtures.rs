//! Synthetic GLU-style layer suites.
//!
//! Attention and gate/up projections see Gaussian inputs. The down_proj input
//! is heavy tailed (Student-t) with one channel scaled by a large factor on
//! every token, which is the activation pattern that makes it the hardest
//! layer to quantize.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};

use super::LayerDump;
use crate::quantizer::{FloatTensor, LayerKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GluFixtureOptions {
    pub tokens: usize,
    pub hidden: usize,
    pub intermediate: usize,
    /// Output features of every layer.
    pub out_features: usize,
    pub outlier_scale: f32,
    pub student_df: f32,
}

impl Default for GluFixtureOptions {
    fn default() -> Self {
        Self { tokens: 16, hidden: 256, intermediate: 512, out_features: 64, outlier_scale: 100.0, student_df: 3.0 }
    }
}

fn sample(rows: usize, cols: usize, rng: &mut ChaCha8Rng, dist: &impl Distribution<f32>) -> FloatTensor {
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    FloatTensor::new(data, rows, cols).expect("finite samples")
}

/// Five layers named `blk0.<kind>`, deterministic in `seed`.
pub fn glu_fixture(seed: u64, opts: &GluFixtureOptions) -> Result<Vec<LayerDump>> {
    if opts.tokens == 0 || opts.hidden == 0 || opts.intermediate == 0 || opts.out_features == 0 {
        return Err(Error::InvalidInput("fixture dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act = Normal::new(0.0f32, 1.0).expect("valid normal");
    let weight = Normal::new(0.0f32, 0.02).expect("valid normal");
    let heavy = StudentT::new(opts.student_df).map_err(|e| Error::InvalidInput(format!("student-t: {e}")))?;

    let mut out = Vec::new();
    for kind in [LayerKind::QkvProj, LayerKind::OProj, LayerKind::GateProj, LayerKind::UpProj] {
        let w = sample(opts.out_features, opts.hidden, &mut rng, &weight);
        let x = sample(opts.tokens, opts.hidden, &mut rng, &act);
        out.push(LayerDump::new(format!("blk0.{kind}"), kind, w, x)?);
    }

    let w = sample(opts.out_features, opts.intermediate, &mut rng, &weight);
    let x = sample(opts.tokens, opts.intermediate, &mut rng, &heavy);
    let channel = rng.random_range(0..opts.intermediate);
    let scale = opts.outlier_scale;
    let x = FloatTensor::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) * if c == channel { scale } else { 1.0 });
    out.push(LayerDump::new("blk0.down_proj", LayerKind::DownProj, w, x)?);
    Ok(out)
}
