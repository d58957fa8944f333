//! Exhaustive references for tiny instances.
//!
//! These enumerate the full search space and evaluate objectives directly
//! from their definitions with wide integers, sharing no code with the
//! heuristics they are used to check.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ActivationBatch, QuantizedTensor};

pub const MAX_SEQUENCE_CHANNELS: usize = 8;
pub const MAX_CLUSTER_CHANNELS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResult<S> {
    pub best_value: u64,
    pub best_solution: S,
    pub explored: u64,
}

/// Total sign flips over all samples and tile columns when accumulating in
/// `order`, using the flip definition with sign(0) = 1.
pub fn sequence_flips(tile: &QuantizedTensor, acts: &ActivationBatch, order: &[usize]) -> u64 {
    let mut flips = 0;
    for n in 0..acts.samples() {
        let a = acts.sample(n);
        for k in 0..tile.cols() {
            let mut psum: i64 = 0;
            for &c in order {
                let next = psum + a[c] as i64 * tile.get(c, k) as i64;
                if (psum < 0) != (next < 0) {
                    flips += 1;
                }
                psum = next;
            }
        }
    }
    flips
}

/// Minimum total sign flips over all `C!` input orders; the argmin is the
/// lexicographically first optimal order.
pub fn brute_force_sequence(tile: &QuantizedTensor, acts: &ActivationBatch) -> Result<OracleResult<Vec<usize>>> {
    let c = tile.rows();
    if c > MAX_SEQUENCE_CHANNELS {
        return Err(Error::TooLarge {
            what: "input channels",
            size: c,
            limit: MAX_SEQUENCE_CHANNELS,
        });
    }
    acts.check_channels(c)?;
    let mut best: Option<(u64, Vec<usize>)> = None;
    let mut explored = 0;
    for perm in (0..c).permutations(c) {
        explored += 1;
        let v = sequence_flips(tile, acts, &perm);
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, perm));
        }
    }
    let (best_value, best_solution) = best.expect("at least one permutation");
    Ok(OracleResult {
        best_value,
        best_solution,
        explored,
    })
}

/// Sum over clusters of pairwise Hamming distances between column signs.
pub fn partition_sd(tile: &QuantizedTensor, clusters: &[Vec<usize>]) -> u64 {
    let nonneg = |r: usize, k: usize| tile.get(r, k) >= 0;
    clusters
        .iter()
        .map(|c| {
            c.iter()
                .tuple_combinations()
                .map(|(&x, &y)| (0..tile.rows()).filter(|&r| nonneg(r, x) != nonneg(r, y)).count() as u64)
                .sum::<u64>()
        })
        .sum()
}

/// Every hard-balanced partition of `0..k` into clusters of `capacity`
/// (plus one remainder cluster when `capacity` does not divide `k`). Each
/// partition is produced once, clusters listed by smallest member.
pub fn balanced_partitions(k: usize, capacity: usize) -> Vec<Vec<Vec<usize>>> {
    assert!(capacity >= 1);
    let full = k / capacity;
    let rem = k % capacity;
    let mut out = Vec::new();
    let mut current = Vec::new();
    let remaining: Vec<usize> = (0..k).collect();
    partitions_rec(&remaining, capacity, full, rem, &mut current, &mut out);
    out
}

fn partitions_rec(
    remaining: &[usize],
    capacity: usize,
    full_left: usize,
    rem: usize,
    current: &mut Vec<Vec<usize>>,
    out: &mut Vec<Vec<Vec<usize>>>,
) {
    let Some((&first, rest)) = remaining.split_first() else {
        out.push(current.clone());
        return;
    };
    let mut sizes = Vec::new();
    if full_left > 0 {
        sizes.push(capacity);
    }
    if rem > 0 {
        sizes.push(rem);
    }
    for size in sizes {
        for others in rest.iter().copied().combinations(size - 1) {
            let mut cluster = vec![first];
            cluster.extend(&others);
            let left: Vec<usize> = rest.iter().copied().filter(|x| !others.contains(x)).collect();
            current.push(cluster);
            if size == capacity && full_left > 0 {
                partitions_rec(&left, capacity, full_left - 1, rem, current, out);
            } else {
                partitions_rec(&left, capacity, full_left, 0, current, out);
            }
            current.pop();
        }
    }
}

/// Number of hard-balanced partitions:
/// `k! / ((capacity!)^m * m! * r!)` for `m` full clusters and remainder `r`.
pub fn balanced_partition_count(k: usize, capacity: usize) -> u64 {
    let fact = |n: usize| (1..=n as u64).product::<u64>();
    let m = k / capacity;
    let r = k % capacity;
    fact(k) / (fact(capacity).pow(m as u32) * fact(m) * fact(r))
}

pub fn brute_force_clustering(w: &QuantizedTensor, capacity: usize) -> Result<OracleResult<Vec<Vec<usize>>>> {
    let k = w.cols();
    if k > MAX_CLUSTER_CHANNELS {
        return Err(Error::TooLarge {
            what: "output channels",
            size: k,
            limit: MAX_CLUSTER_CHANNELS,
        });
    }
    if capacity == 0 {
        return Err(Error::InvalidClustering("capacity must be positive".into()));
    }
    let mut best: Option<(u64, Vec<Vec<usize>>)> = None;
    let mut explored = 0;
    for p in balanced_partitions(k, capacity) {
        explored += 1;
        let v = partition_sd(w, &p);
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, p));
        }
    }
    let (best_value, best_solution) = best.expect("at least one partition");
    Ok(OracleResult {
        best_value,
        best_solution,
        explored,
    })
}
