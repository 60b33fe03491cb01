use super::{GemmConfig, GemmOutput, GemmStats};
use crate::quantizer::{GroupAxis, QuantTensor};
use crate::{Error, Result};

/// Direct per-group integer dot products of the signed quantized values,
/// dequantized in the same ascending group order as the fused engine. No
/// bit decomposition is involved.
pub fn int_matmul_reference(wq: &QuantTensor, xq: &QuantTensor, cfg: &GemmConfig) -> Result<GemmOutput> {
    cfg.validate()?;
    for (name, t) in [("weights", wq), ("activations", xq)] {
        if t.group_axis() != GroupAxis::Cols {
            return Err(Error::Shape(format!("{name} must be grouped along their columns")));
        }
        if t.group_size() != cfg.group_size {
            return Err(Error::Shape(format!(
                "{name} group size {} != config group size {}",
                t.group_size(),
                cfg.group_size
            )));
        }
    }
    if wq.shape() != [cfg.n, cfg.k] || xq.shape() != [cfg.m, cfg.k] {
        return Err(Error::Shape(format!(
            "weights {:?} and activations {:?} do not fit M={} N={} K={}",
            wq.shape(),
            xq.shape(),
            cfg.m,
            cfg.n,
            cfg.k
        )));
    }
    if wq.bits() != cfg.weight_bits || xq.bits() != cfg.activation_bits {
        return Err(Error::Shape(format!(
            "operands are W{}A{}, config expects W{}A{}",
            wq.bits(),
            xq.bits(),
            cfg.weight_bits,
            cfg.activation_bits
        )));
    }

    let (m, n, k, gs) = (cfg.m, cfg.n, cfg.k, cfg.group_size);
    let groups = cfg.groups();
    let (wv, xv) = (wq.values(), xq.values());
    let (ws, xs) = (wq.scales(), xq.scales());
    let mut data = vec![0f32; m * n];
    let mut trace = cfg.trace.then(|| vec![0i64; m * n * groups]);
    for r in 0..m {
        for c in 0..n {
            let mut y = 0f64;
            for g in 0..groups {
                let (lo, hi) = (g * gs, ((g + 1) * gs).min(k));
                let dot: i64 = wv[c * k + lo..c * k + hi]
                    .iter()
                    .zip(&xv[r * k + lo..r * k + hi])
                    .map(|(&a, &b)| i64::from(a) * i64::from(b))
                    .sum();
                y += (f64::from(ws[c * groups + g]) * f64::from(xs[r * groups + g])) * dot as f64;
                if let Some(t) = trace.as_mut() {
                    t[(r * n + c) * groups + g] = dot;
                }
            }
            data[r * n + c] = y as f32;
        }
    }
    Ok(GemmOutput { data, m, n, trace, stats: GemmStats::default() })
}
