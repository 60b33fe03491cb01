use serde::Serialize;

use crate::{Error, Result};

/// In-place tree fold of `groups` lane groups of `chunk_m` lanes each, every
/// lane holding `width` values. Round `i` adds lane group `j + groups/2^(i+1)`
/// into group `j`. Returns the number of rounds (`log2(groups)`).
pub(crate) fn fold_lanes(lanes: &mut [i64], width: usize, chunk_m: usize, groups: usize) -> u32 {
    debug_assert!(groups.is_power_of_two());
    let group_len = chunk_m * width;
    let mut live = groups;
    let mut rounds = 0;
    while live > 1 {
        let half = live / 2;
        let (lo, hi) = lanes.split_at_mut(half * group_len);
        for (a, b) in lo.iter_mut().zip(&hi[..half * group_len]) {
            *a += *b;
        }
        live = half;
        rounds += 1;
    }
    rounds
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldOutcome {
    /// `chunk_m × width` completed sums.
    pub sums: Vec<i64>,
    pub rounds: u32,
}

/// Chunk-level reduction for batches smaller than the MMA row count.
///
/// `lane_partials` holds `mma_m` lanes of equal width; lane `j` carries a
/// partial for row `j % chunk_m`. After `log2(mma_m) - log2(chunk_m)` fold
/// rounds the first `chunk_m` lanes hold the full per-row sums.
pub fn fold_chunk_level(lane_partials: &[i64], chunk_m: usize, mma_m: usize) -> Result<FoldOutcome> {
    if !chunk_m.is_power_of_two() || !mma_m.is_power_of_two() {
        return Err(Error::Config(format!("lane counts must be powers of two (chunk_m {chunk_m}, mma_m {mma_m})")));
    }
    if chunk_m > mma_m {
        return Err(Error::Config(format!("chunk_m {chunk_m} exceeds mma_m {mma_m}")));
    }
    if !lane_partials.len().is_multiple_of(mma_m) {
        return Err(Error::Shape(format!("{} partials do not split into {mma_m} lanes", lane_partials.len())));
    }
    let width = lane_partials.len() / mma_m;
    let mut lanes = lane_partials.to_vec();
    let rounds = fold_lanes(&mut lanes, width, chunk_m, mma_m / chunk_m);
    lanes.truncate(chunk_m * width);
    Ok(FoldOutcome { sums: lanes, rounds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemv_needs_three_rounds() {
        let lanes: Vec<i64> = (1..=8).collect();
        let f = fold_chunk_level(&lanes, 1, 8).unwrap();
        assert_eq!(f.rounds, 3);
        assert_eq!(f.sums, vec![36]);
    }

    #[test]
    fn full_chunk_is_identity() {
        let lanes: Vec<i64> = (0..16).collect();
        let f = fold_chunk_level(&lanes, 8, 8).unwrap();
        assert_eq!(f.rounds, 0);
        assert_eq!(f.sums, lanes);
    }

    #[test]
    fn two_row_chunk_matches_direct_sum() {
        let lanes: Vec<i64> = vec![5, -1, 7, 3, 2, 9, -4, 6];
        let f = fold_chunk_level(&lanes, 2, 8).unwrap();
        assert_eq!(f.rounds, 2);
        assert_eq!(f.sums, vec![5 + 7 + 2 - 4, -1 + 3 + 9 + 6]);
    }

    #[test]
    fn rejects_bad_lane_counts() {
        assert!(fold_chunk_level(&[0; 6], 3, 6).is_err());
        assert!(fold_chunk_level(&[0; 8], 16, 8).is_err());
        assert!(fold_chunk_level(&[0; 9], 2, 8).is_err());
    }
}
