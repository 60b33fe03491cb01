use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Linear-layer roles in a transformer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    QkvProj,
    OProj,
    GateProj,
    UpProj,
    DownProj,
    Generic,
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        LayerKind::QkvProj,
        LayerKind::OProj,
        LayerKind::GateProj,
        LayerKind::UpProj,
        LayerKind::DownProj,
        LayerKind::Generic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::QkvProj => "qkv_proj",
            LayerKind::OProj => "o_proj",
            LayerKind::GateProj => "gate_proj",
            LayerKind::UpProj => "up_proj",
            LayerKind::DownProj => "down_proj",
            LayerKind::Generic => "generic",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::PolicyMiss(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    /// Gated MLP (gate/up/down); down_proj inputs carry the worst outliers.
    Glu,
    /// Plain two-layer MLP; quantized uniformly.
    NonGlu,
}

/// Weight and activation bit-widths per layer.
///
/// Lookups by layer name consult `activation_bits_by_layer` first and fall
/// back to the layer's kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitPolicy {
    pub weight_bits: u8,
    pub activation_bits_by_kind: BTreeMap<LayerKind, u8>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub activation_bits_by_layer: BTreeMap<String, u8>,
}

impl BitPolicy {
    pub fn uniform(activation_bits: u8) -> Self {
        Self {
            weight_bits: 6,
            activation_bits_by_kind: LayerKind::ALL.iter().map(|&k| (k, activation_bits)).collect(),
            activation_bits_by_layer: BTreeMap::new(),
        }
    }

    /// W6 everywhere; 8-bit activations only for down_proj.
    pub fn flexq_default() -> Self {
        let mut p = Self::uniform(6);
        p.activation_bits_by_kind.insert(LayerKind::DownProj, 8);
        p
    }

    pub fn for_family(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Glu => Self::flexq_default(),
            ModelFamily::NonGlu => Self::uniform(6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |b: u8| b == 6 || b == 8;
        if self.weight_bits != 6 {
            return Err(Error::Config(format!("weight bits {} (expected 6)", self.weight_bits)));
        }
        for (k, &b) in &self.activation_bits_by_kind {
            if !ok(b) {
                return Err(Error::Config(format!("{k} mapped to {b} bits (expected 6 or 8)")));
            }
        }
        for (name, &b) in &self.activation_bits_by_layer {
            if !ok(b) {
                return Err(Error::Config(format!("{name} mapped to {b} bits (expected 6 or 8)")));
            }
        }
        Ok(())
    }

    pub fn for_layer(&self, name: &str, kind: LayerKind) -> Result<u8> {
        match self.activation_bits_by_layer.get(name) {
            Some(&b) => Ok(b),
            None => activation_bits(kind, self),
        }
    }
}

impl Default for BitPolicy {
    fn default() -> Self {
        Self::flexq_default()
    }
}

pub fn activation_bits(kind: LayerKind, policy: &BitPolicy) -> Result<u8> {
    policy.activation_bits_by_kind.get(&kind).copied().ok_or_else(|| Error::PolicyMiss(kind.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_policy_keeps_down_proj_at_eight_bits() {
        let p = BitPolicy::flexq_default();
        assert_eq!(activation_bits(LayerKind::DownProj, &p).unwrap(), 8);
        assert_eq!(activation_bits(LayerKind::GateProj, &p).unwrap(), 6);
        for k in LayerKind::ALL {
            assert!(activation_bits(k, &p).is_ok());
        }
        p.validate().unwrap();
    }

    #[test]
    fn uniform_policy_maps_generic_to_six() {
        assert_eq!(activation_bits(LayerKind::Generic, &BitPolicy::uniform(6)).unwrap(), 6);
        assert_eq!(BitPolicy::for_family(ModelFamily::NonGlu), BitPolicy::uniform(6));
    }

    #[test]
    fn missing_kind_is_a_policy_miss() {
        let mut p = BitPolicy::flexq_default();
        p.activation_bits_by_kind.remove(&LayerKind::OProj);
        assert!(matches!(activation_bits(LayerKind::OProj, &p), Err(Error::PolicyMiss(_))));
        assert!(matches!("lm_head".parse::<LayerKind>(), Err(Error::PolicyMiss(_))));
    }

    #[test]
    fn layer_override_takes_precedence() {
        let mut p = BitPolicy::uniform(6);
        p.activation_bits_by_layer.insert("blk3.up".into(), 8);
        assert_eq!(p.for_layer("blk3.up", LayerKind::UpProj).unwrap(), 8);
        assert_eq!(p.for_layer("blk4.up", LayerKind::UpProj).unwrap(), 6);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in LayerKind::ALL {
            assert_eq!(k.as_str().parse::<LayerKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.as_str()));
        }
    }
}
