//! Layer-wise quantization sensitivity.
//!
//! Each layer is scored by the SQNR of its own output `Y = X·Wᵀ` after
//! quantizing both operands and running the bit-serial engine. Lower SQNR
//! means more sensitive; the most sensitive layers are candidates for 8-bit
//! activations.

mod dump;
pub mod fixtures;

pub use dump::{load_dump_dir, write_dump_dir, DumpEntry, MANIFEST_FILE};

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bitgemm::{config_for, group_matmul_fused, prepare};
use crate::par::map_range;
use crate::quantizer::{check_bits, quantize, BitPolicy, FloatTensor, LayerKind};
use crate::{Error, Result};

/// One linear layer's weights `W[N, K]` and recorded inputs `X[tokens, K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDump {
    pub layer_name: String,
    pub layer_kind: LayerKind,
    weight: FloatTensor,
    activations: FloatTensor,
}

impl LayerDump {
    pub fn new(
        layer_name: impl Into<String>,
        layer_kind: LayerKind,
        weight: FloatTensor,
        activations: FloatTensor,
    ) -> Result<Self> {
        let layer_name = layer_name.into();
        if activations.cols() != weight.cols() {
            return Err(Error::Shape(format!(
                "{layer_name}: activations have K={} but weights K={}",
                activations.cols(),
                weight.cols()
            )));
        }
        Ok(Self { layer_name, layer_kind, weight, activations })
    }

    pub fn weight(&self) -> &FloatTensor {
        &self.weight
    }

    pub fn activations(&self) -> &FloatTensor {
        &self.activations
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerError {
    /// `+inf` when the reference output is all zero.
    #[serde(with = "inf_as_string")]
    pub sqnr_db: f64,
    pub output_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSensitivity {
    pub layer_name: String,
    pub kind: LayerKind,
    #[serde(with = "inf_as_string")]
    pub sqnr_db: f64,
    pub output_mse: f64,
    #[serde(with = "inf_as_string")]
    pub outlier_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub weight_bits: u8,
    pub activation_bits: u8,
    pub group_size: usize,
    /// Per-layer results in input order.
    pub layers: Vec<LayerSensitivity>,
    /// Layer names, most sensitive (lowest SQNR) first.
    pub ranking: Vec<String>,
}

impl SensitivityReport {
    pub fn layer(&self, name: &str) -> Option<&LayerSensitivity> {
        self.layers.iter().find(|l| l.layer_name == name)
    }
}

/// Quantizes `W` and `X` along K and compares the engine's output with the
/// float product.
pub fn layer_error(d: &LayerDump, w_bits: u8, a_bits: u8, group_size: usize) -> Result<LayerError> {
    check_bits(w_bits)?;
    check_bits(a_bits)?;
    let reference = float_matmul(&d.activations, &d.weight);
    let wq = quantize(&d.weight, w_bits, group_size)?;
    let xq = quantize(&d.activations, a_bits, group_size)?;
    let ops = prepare(&wq, &xq, 64)?;
    let out = group_matmul_fused(&ops.weights, &ops.activations, &ops.w_scales, &ops.x_scales, &config_for(&wq, &xq))?;

    let (mut signal, mut noise) = (0.0f64, 0.0f64);
    for (r, q) in reference.iter().zip(&out.data) {
        signal += r * r;
        noise += (r - f64::from(*q)).powi(2);
    }
    if signal == 0.0 {
        return Ok(LayerError { sqnr_db: f64::INFINITY, output_mse: 0.0 });
    }
    let output_mse = noise / reference.len() as f64;
    let sqnr_db = if noise == 0.0 { f64::INFINITY } else { 10.0 * (signal / noise).log10() };
    Ok(LayerError { sqnr_db, output_mse })
}

/// `Y[M, N] = X[M, K] · W[N, K]ᵀ` in f64.
fn float_matmul(x: &FloatTensor, w: &FloatTensor) -> Vec<f64> {
    let (x, w) = (x.to_row_major(), w.to_row_major());
    let k = x.cols();
    let mut y = Vec::with_capacity(x.rows() * w.rows());
    for xr in x.data().chunks_exact(k) {
        for wr in w.data().chunks_exact(k) {
            y.push(xr.iter().zip(wr).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum());
        }
    }
    y
}

/// Largest per-channel max-abs over the median per-channel max-abs of `X`.
pub fn outlier_score(x: &FloatTensor) -> f64 {
    let mut peaks = vec![0.0f64; x.cols()];
    for r in 0..x.rows() {
        for (c, p) in peaks.iter_mut().enumerate() {
            *p = p.max(f64::from(x.get(r, c).abs()));
        }
    }
    if peaks.is_empty() {
        return 1.0;
    }
    peaks.sort_by(f64::total_cmp);
    let n = peaks.len();
    let median = if n % 2 == 1 { peaks[n / 2] } else { 0.5 * (peaks[n / 2 - 1] + peaks[n / 2]) };
    let max = peaks[n - 1];
    match (max == 0.0, median == 0.0) {
        (true, _) => 1.0,
        (false, true) => f64::INFINITY,
        (false, false) => max / median,
    }
}

/// Scores every layer (in parallel) and ranks them by ascending SQNR, ties
/// broken by layer name.
pub fn rank_layers(dumps: &[LayerDump], w_bits: u8, a_bits: u8, group_size: usize) -> Result<SensitivityReport> {
    rank_layers_on(dumps, w_bits, a_bits, group_size, 0)
}

/// [`rank_layers`] with an explicit worker count (`1` is sequential, `0`
/// uses the global rayon pool).
pub fn rank_layers_on(
    dumps: &[LayerDump],
    w_bits: u8,
    a_bits: u8,
    group_size: usize,
    workers: usize,
) -> Result<SensitivityReport> {
    if dumps.is_empty() {
        return Err(Error::InvalidInput("no layers to rank".into()));
    }
    let scored = map_range(dumps.len(), workers, |i| {
        let d = &dumps[i];
        layer_error(d, w_bits, a_bits, group_size).map(|e| LayerSensitivity {
            layer_name: d.layer_name.clone(),
            kind: d.layer_kind,
            sqnr_db: e.sqnr_db,
            output_mse: e.output_mse,
            outlier_score: outlier_score(&d.activations),
        })
    });
    let layers = scored.into_iter().collect::<Result<Vec<_>>>()?;

    let mut order: Vec<&LayerSensitivity> = layers.iter().collect();
    order.sort_by(|a, b| match a.sqnr_db.total_cmp(&b.sqnr_db) {
        Ordering::Equal => a.layer_name.cmp(&b.layer_name),
        o => o,
    });
    let ranking = order.into_iter().map(|l| l.layer_name.clone()).collect();
    Ok(SensitivityReport { weight_bits: w_bits, activation_bits: a_bits, group_size, layers, ranking })
}

/// Gives the `budget_k` most sensitive layers `high_bits` activations and
/// everything else 6. Per-layer entries are always written; a kind is also
/// promoted when every one of its layers was selected. `budget_k` is clamped
/// to the layer count.
pub fn assign_policy(report: &SensitivityReport, high_bits: u8, budget_k: usize) -> Result<BitPolicy> {
    if !matches!(high_bits, 6 | 8) {
        return Err(Error::Config(format!("high bits {high_bits} (expected 6 or 8)")));
    }
    let mut policy = BitPolicy::uniform(6);
    let k = budget_k.min(report.ranking.len());
    let selected = &report.ranking[..k];
    for name in selected {
        policy.activation_bits_by_layer.insert(name.clone(), high_bits);
    }
    let mut per_kind: BTreeMap<LayerKind, (usize, usize)> = BTreeMap::new();
    for l in &report.layers {
        let e = per_kind.entry(l.kind).or_default();
        e.0 += 1;
        if selected.contains(&l.layer_name) {
            e.1 += 1;
        }
    }
    for (kind, (total, chosen)) in per_kind {
        if chosen > 0 && chosen == total {
            policy.activation_bits_by_kind.insert(kind, high_bits);
        }
    }
    Ok(policy)
}

/// Writes non-finite values as the strings `"inf"` / `"-inf"` since JSON has
/// no infinity literal.
mod inf_as_string {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(D::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}
