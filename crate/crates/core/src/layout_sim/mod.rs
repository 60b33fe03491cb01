//! Address-level model of banked shared memory and coalesced global loads.
//!
//! There is no timing model. A phase is one warp-wide memory instruction;
//! its lanes are grouped into transactions of at most `transaction_bytes`.
//! In shared memory, two lanes of one transaction touching the same bank in
//! different rows cost one replay per extra row; touching the same word is a
//! broadcast. Global loads cost one transaction per distinct aligned
//! `transaction_bytes` segment.
//!
//! Moved bits are accounted per lane in shared memory (every bank word a
//! lane touches moves `bank_width_bits`) and per segment in global memory.

mod patterns;

pub use patterns::{
    canonical_patterns, chunked_layout_pattern, fp16_mma_pattern, golden_check, naive_layout_pattern, ChunkDims,
    ChunkedDims, ChunkedOptions, GoldenResult, LayoutSpec, NaiveDims,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemModel {
    pub bank_count: u32,
    pub bank_width_bits: u32,
    pub transaction_bytes: u32,
    pub lane_count: u32,
    /// Bits a lane requests per load instruction.
    pub load_granularity_bits: u32,
}

impl Default for MemModel {
    fn default() -> Self {
        Self { bank_count: 32, bank_width_bits: 32, transaction_bytes: 128, lane_count: 32, load_granularity_bits: 32 }
    }
}

impl MemModel {
    pub fn validate(&self) -> Result<()> {
        if self.bank_count == 0 || self.lane_count == 0 || self.transaction_bytes == 0 {
            return Err(Error::Config("memory model has a zero dimension".into()));
        }
        if self.bank_width_bits == 0 || !self.bank_width_bits.is_multiple_of(8) {
            return Err(Error::Config(format!("bank width {} is not a whole number of bytes", self.bank_width_bits)));
        }
        Ok(())
    }

    pub fn bank_bytes(&self) -> u64 {
        u64::from(self.bank_width_bits / 8)
    }

    /// Bytes covered by one row across all banks.
    pub fn row_bytes(&self) -> u64 {
        u64::from(self.bank_count) * self.bank_bytes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemorySpace {
    Shared,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub byte_offset: u64,
    pub byte_length: u64,
    /// Payload bits the lane actually needs out of the bytes it reads.
    pub useful_bits: u64,
}

impl Request {
    pub fn dense(byte_offset: u64, byte_length: u64) -> Self {
        Self { byte_offset, byte_length, useful_bits: byte_length * 8 }
    }
}

/// One warp-wide access; `lanes[i]` are the requests of lane `i` (empty for
/// an idle lane).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub label: String,
    pub space: MemorySpace,
    pub lanes: Vec<Vec<Request>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPattern {
    pub description: String,
    pub extent_bytes: u64,
    pub phases: Vec<Phase>,
}

impl AccessPattern {
    /// Keeps only the requests matching `keep`, dropping phases left empty.
    pub fn filter_requests(&self, description: &str, keep: impl Fn(&Request) -> bool) -> Self {
        let phases = self
            .phases
            .iter()
            .map(|p| Phase {
                label: p.label.clone(),
                space: p.space,
                lanes: p.lanes.iter().map(|l| l.iter().copied().filter(|r| keep(r)).collect()).collect(),
            })
            .filter(|p: &Phase| p.lanes.iter().any(|l| !l.is_empty()))
            .collect();
        Self { description: description.to_string(), extent_bytes: self.extent_bytes, phases }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub label: String,
    pub space: MemorySpace,
    pub transactions: u64,
    pub bank_conflicts: u64,
    pub useful_bits: u64,
    pub moved_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutReport {
    pub description: String,
    pub transactions: u64,
    pub bank_conflicts: u64,
    pub useful_bits: u64,
    pub moved_bits: u64,
    pub utilization: f64,
    pub phases: Vec<PhaseReport>,
}

impl LayoutReport {
    /// Conflicts summed over phases whose label starts with `prefix`.
    pub fn conflicts_in(&self, prefix: &str) -> u64 {
        self.phases.iter().filter(|p| p.label.starts_with(prefix)).map(|p| p.bank_conflicts).sum()
    }

    /// Transactions of each phase whose label starts with `prefix`.
    pub fn transactions_in(&self, prefix: &str) -> Vec<u64> {
        self.phases.iter().filter(|p| p.label.starts_with(prefix)).map(|p| p.transactions).collect()
    }
}

/// Bank words `[first, last]` touched by a request.
fn words_of(r: &Request, bank_bytes: u64) -> std::ops::RangeInclusive<u64> {
    r.byte_offset / bank_bytes..=(r.byte_offset + r.byte_length - 1) / bank_bytes
}

fn simulate_phase(phase: &Phase, model: &MemModel) -> PhaseReport {
    let bank_bytes = model.bank_bytes();
    let lane_bytes = phase
        .lanes
        .iter()
        .map(|l| l.iter().map(|r| words_of(r, bank_bytes).count() as u64 * bank_bytes).sum::<u64>())
        .max()
        .unwrap_or(0)
        .max(1);
    let lanes_per_txn =
        (u64::from(model.transaction_bytes) / lane_bytes).clamp(1, u64::from(model.lane_count)) as usize;

    let mut rep = PhaseReport {
        label: phase.label.clone(),
        space: phase.space,
        transactions: 0,
        bank_conflicts: 0,
        useful_bits: 0,
        moved_bits: 0,
    };
    for group in phase.lanes.chunks(lanes_per_txn) {
        let requests = || group.iter().flatten();
        if requests().next().is_none() {
            continue;
        }
        rep.useful_bits += requests().map(|r| r.useful_bits).sum::<u64>();
        match phase.space {
            MemorySpace::Shared => {
                let mut rows_by_bank: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
                for r in requests() {
                    for word in words_of(r, bank_bytes) {
                        rep.moved_bits += u64::from(model.bank_width_bits);
                        let bank = word % u64::from(model.bank_count);
                        rows_by_bank.entry(bank).or_default().insert(word / u64::from(model.bank_count));
                    }
                }
                let replays: u64 = rows_by_bank.values().map(|rows| rows.len() as u64 - 1).sum();
                rep.bank_conflicts += replays;
                rep.transactions += 1 + replays;
            }
            MemorySpace::Global => {
                let seg = u64::from(model.transaction_bytes);
                let segments: BTreeSet<u64> =
                    requests().flat_map(|r| r.byte_offset / seg..=(r.byte_offset + r.byte_length - 1) / seg).collect();
                rep.transactions += segments.len() as u64;
                rep.moved_bits += segments.len() as u64 * seg * 8;
            }
        }
    }
    rep
}

pub fn simulate(pattern: &AccessPattern, model: &MemModel) -> Result<LayoutReport> {
    model.validate()?;
    for phase in &pattern.phases {
        if phase.lanes.len() > model.lane_count as usize {
            return Err(Error::InvalidInput(format!(
                "phase `{}` uses {} lanes, model has {}",
                phase.label,
                phase.lanes.len(),
                model.lane_count
            )));
        }
        for r in phase.lanes.iter().flatten() {
            if r.byte_length == 0 || r.byte_offset + r.byte_length > pattern.extent_bytes {
                return Err(Error::Bounds { offset: r.byte_offset, len: r.byte_length, extent: pattern.extent_bytes });
            }
            if r.useful_bits > r.byte_length * 8 {
                return Err(Error::InvalidInput(format!(
                    "request claims {} useful bits in {} bytes",
                    r.useful_bits, r.byte_length
                )));
            }
        }
    }

    let phases: Vec<PhaseReport> = pattern.phases.iter().map(|p| simulate_phase(p, model)).collect();
    let useful_bits: u64 = phases.iter().map(|p| p.useful_bits).sum();
    let moved_bits: u64 = phases.iter().map(|p| p.moved_bits).sum();
    if moved_bits == 0 {
        return Err(Error::InvalidInput("pattern moves no data".into()));
    }
    Ok(LayoutReport {
        description: pattern.description.clone(),
        transactions: phases.iter().map(|p| p.transactions).sum(),
        bank_conflicts: phases.iter().map(|p| p.bank_conflicts).sum(),
        useful_bits,
        moved_bits,
        utilization: useful_bits as f64 / moved_bits as f64,
        phases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shared(lanes: Vec<Vec<Request>>) -> AccessPattern {
        AccessPattern {
            description: "t".into(),
            extent_bytes: 1 << 16,
            phases: vec![Phase { label: "p".into(), space: MemorySpace::Shared, lanes }],
        }
    }

    #[test]
    fn contiguous_words_are_one_transaction() {
        let p = shared((0..32).map(|i| vec![Request::dense(4 * i, 4)]).collect());
        let r = simulate(&p, &MemModel::default()).unwrap();
        assert_eq!((r.transactions, r.bank_conflicts), (1, 0));
        assert_eq!(r.utilization, 1.0);
    }

    #[test]
    fn same_bank_different_rows_replays() {
        // Stride of 128 bytes puts every lane in bank 0.
        let p = shared((0..32).map(|i| vec![Request::dense(128 * i, 4)]).collect());
        let r = simulate(&p, &MemModel::default()).unwrap();
        assert_eq!(r.bank_conflicts, 31);
        assert_eq!(r.transactions, 32);
    }

    #[test]
    fn broadcast_is_free() {
        let p = shared((0..32).map(|_| vec![Request::dense(64, 4)]).collect());
        let r = simulate(&p, &MemModel::default()).unwrap();
        assert_eq!((r.transactions, r.bank_conflicts), (1, 0));
    }

    #[test]
    fn wide_lanes_split_into_transactions() {
        let p = shared((0..32).map(|i| vec![Request::dense(16 * i, 16)]).collect());
        let r = simulate(&p, &MemModel::default()).unwrap();
        assert_eq!((r.transactions, r.bank_conflicts), (4, 0));
    }

    #[test]
    fn global_counts_segments() {
        let mut p = shared((0..32).map(|i| vec![Request::dense(16 * i + 8, 16)]).collect());
        p.phases[0].space = MemorySpace::Global;
        let r = simulate(&p, &MemModel::default()).unwrap();
        // Each 8-lane group covers 128 bytes starting 8 bytes into a segment.
        assert_eq!(r.transactions, 8);
        assert_eq!(r.bank_conflicts, 0);
        assert!(r.utilization < 1.0);
    }

    #[test]
    fn out_of_extent_is_a_bounds_error() {
        let mut p = shared(vec![vec![Request::dense(60, 8)]]);
        p.extent_bytes = 64;
        assert!(matches!(simulate(&p, &MemModel::default()), Err(Error::Bounds { .. })));
        let p = shared(vec![vec![Request { byte_offset: 0, byte_length: 4, useful_bits: 33 }]]);
        assert!(simulate(&p, &MemModel::default()).is_err());
        assert!(simulate(&shared(vec![vec![]]), &MemModel::default()).is_err());
    }
}
