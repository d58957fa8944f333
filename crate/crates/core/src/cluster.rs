//! Output-channel clustering by weight sign pattern.
//!
//! Output channels whose weight columns agree in sign can share an input
//! sequence that keeps all their PSUMs on one side of zero. Channels are
//! grouped into array-width clusters minimising the summed pairwise sign
//! difference (Hamming distance between column sign vectors).

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan::LayerPlan;
use crate::reorder::{consecutive_blocks, sort_input_channels, SortCriteria};
use crate::sim::sign;
use crate::tensor::{ArrayConfig, QuantizedTensor};

/// Packed sign bits of a weight column (1 = non-negative).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignVector {
    len: usize,
    words: Vec<u64>,
}

impl SignVector {
    pub fn from_bits(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for b in bits {
            if len % 64 == 0 {
                words.push(0);
            }
            if b {
                words[len / 64] |= 1 << (len % 64);
            }
            len += 1;
        }
        Self { len, words }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    fn hamming(&self, other: &Self) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }
}

pub fn sign_vector(column: &[i8]) -> SignVector {
    SignVector::from_bits(column.iter().map(|&w| sign(w as i32)))
}

/// Sign vectors of every output channel.
pub fn sign_matrix(w: &QuantizedTensor) -> Vec<SignVector> {
    (0..w.cols()).map(|k| sign_vector(&w.column(k))).collect()
}

/// Manhattan distance between two sign vectors.
pub fn sign_difference(x: &SignVector, y: &SignVector) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "sign vectors".into(),
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok(x.hamming(y))
}

/// Sum of sign differences over unordered pairs of `cluster`.
pub fn cluster_sd(w: &QuantizedTensor, cluster: &[usize]) -> Result<usize> {
    if let Some(&bad) = cluster.iter().find(|&&k| k >= w.cols()) {
        return Err(Error::InvalidClustering(format!(
            "channel {bad} out of range for {} outputs",
            w.cols()
        )));
    }
    let signs: Vec<_> = cluster.iter().map(|&k| sign_vector(&w.column(k))).collect();
    Ok(pairwise_sum(&signs))
}

fn pairwise_sum(signs: &[SignVector]) -> usize {
    let mut total = 0;
    for (i, a) in signs.iter().enumerate() {
        for b in &signs[i + 1..] {
            total += a.hamming(b);
        }
    }
    total
}

/// Hard-balanced partition of output channels: `ceil(K / capacity)` disjoint
/// clusters covering `0..K`, all of size `capacity` except at most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputClustering {
    clusters: Vec<Vec<usize>>,
    channels: usize,
    capacity: usize,
}

impl OutputClustering {
    pub fn new(clusters: Vec<Vec<usize>>, channels: usize, capacity: usize) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidClustering(msg));
        if capacity == 0 || channels == 0 {
            return invalid(format!(
                "capacity {capacity} and channel count {channels} must be positive"
            ));
        }
        let expected = channels.div_ceil(capacity);
        if clusters.len() != expected {
            return invalid(format!("{} clusters, expected {expected}", clusters.len()));
        }
        let mut seen = vec![false; channels];
        let mut short = 0;
        for c in &clusters {
            if c.is_empty() || c.len() > capacity {
                return invalid(format!("cluster of size {} with capacity {capacity}", c.len()));
            }
            if c.len() < capacity {
                short += 1;
            }
            for &k in c {
                match seen.get_mut(k) {
                    Some(s) if !*s => *s = true,
                    Some(_) => return invalid(format!("channel {k} appears twice")),
                    None => return invalid(format!("channel {k} out of range")),
                }
            }
        }
        if short > 1 {
            return invalid(format!("{short} clusters below capacity {capacity}"));
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return invalid(format!("channel {k} is not assigned"));
        }
        Ok(Self {
            clusters,
            channels,
            capacity,
        })
    }

    /// Consecutive blocks `{0..A_c}, {A_c..2A_c}, ...`.
    pub fn identity(channels: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidClustering("capacity must be positive".into()));
        }
        Self::new(consecutive_blocks(channels, capacity), channels, capacity)
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total sign difference of the partition.
    pub fn objective(&self, w: &QuantizedTensor) -> Result<usize> {
        self.clusters.iter().map(|c| cluster_sd(w, c)).sum()
    }

    /// Sorts members and orders clusters by their smallest member.
    fn canonical(mut self) -> Self {
        for c in &mut self.clusters {
            c.sort_unstable();
        }
        self.clusters.sort_unstable_by_key(|c| c[0]);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub max_iters: usize,
    /// Number of seeding runs; the first always starts from channel 0, the
    /// rest start from channels drawn with `seed`.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            max_iters: 50,
            restarts: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusteringOutcome {
    pub clustering: OutputClustering,
    pub objective: usize,
    pub identity_objective: usize,
    /// Objective of every accepted assignment of the winning run.
    pub history: Vec<usize>,
    pub used_fallback: bool,
}

/// Capacity-constrained clustering of output channels on their sign vectors.
pub fn balanced_cluster(w: &QuantizedTensor, capacity: usize, params: &ClusterParams) -> Result<OutputClustering> {
    Ok(balanced_cluster_detailed(w, capacity, params)?.clustering)
}

/// As [`balanced_cluster`], also reporting the objective trajectory.
///
/// Each run seeds centroids by farthest-point selection under Hamming
/// distance, then alternates regret-ordered capacity-limited assignment with
/// majority-bit centroid updates. An assignment that raises the objective
/// ends the run. The result never scores worse than consecutive blocks.
pub fn balanced_cluster_detailed(
    w: &QuantizedTensor,
    capacity: usize,
    params: &ClusterParams,
) -> Result<ClusteringOutcome> {
    let k = w.cols();
    let identity = OutputClustering::identity(k, capacity)?;
    let signs = sign_matrix(w);
    let identity_objective = objective_of(&signs, identity.clusters());

    let n = k.div_ceil(capacity);
    let mut caps = vec![capacity; n];
    caps[n - 1] = k - capacity * (n - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Vec<Vec<usize>>, usize, Vec<usize>)> = None;
    for run in 0..params.restarts.max(1) {
        let start = if run == 0 { 0 } else { rng.gen_range(0..k) };
        let (clusters, history) = solve_from(&signs, &caps, start, params.max_iters);
        let obj = *history.last().expect("first assignment is always accepted");
        if best.as_ref().is_none_or(|b| obj < b.1) {
            best = Some((clusters, obj, history));
        }
    }
    let (clusters, objective, history) = best.expect("at least one run");

    let (clustering, objective, used_fallback) = if objective > identity_objective {
        (identity, identity_objective, true)
    } else {
        (
            OutputClustering::new(clusters, k, capacity)?.canonical(),
            objective,
            false,
        )
    };
    Ok(ClusteringOutcome {
        clustering,
        objective,
        identity_objective,
        history,
        used_fallback,
    })
}

fn objective_of(signs: &[SignVector], clusters: &[Vec<usize>]) -> usize {
    clusters
        .iter()
        .map(|c| {
            let mut total = 0;
            for (i, &a) in c.iter().enumerate() {
                for &b in &c[i + 1..] {
                    total += signs[a].hamming(&signs[b]);
                }
            }
            total
        })
        .sum()
}

fn farthest_point_seeds(signs: &[SignVector], n: usize, start: usize) -> Vec<SignVector> {
    let mut chosen = vec![start];
    let mut nearest: Vec<usize> = signs.iter().map(|s| s.hamming(&signs[start])).collect();
    while chosen.len() < n {
        let next = (0..signs.len())
            .filter(|i| !chosen.contains(i))
            .max_by(|&a, &b| nearest[a].cmp(&nearest[b]).then(b.cmp(&a)))
            .expect("more channels than clusters");
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = (*d).min(signs[i].hamming(&signs[next]));
        }
    }
    chosen.into_iter().map(|i| signs[i].clone()).collect()
}

fn assign(signs: &[SignVector], centroids: &[SignVector], caps: &[usize]) -> Vec<Vec<usize>> {
    let dist: Vec<Vec<usize>> = signs
        .iter()
        .map(|s| centroids.iter().map(|c| s.hamming(c)).collect())
        .collect();
    let regret = |d: &[usize]| -> usize {
        let mut sorted = d.to_vec();
        sorted.sort_unstable();
        sorted.get(1).map_or(0, |second| second - sorted[0])
    };
    let mut order: Vec<usize> = (0..signs.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(regret(&dist[i])), i));

    let mut left = caps.to_vec();
    let mut clusters = vec![Vec::new(); centroids.len()];
    for i in order {
        let target = (0..centroids.len())
            .filter(|&j| left[j] > 0)
            .min_by_key(|&j| (dist[i][j], j))
            .expect("capacities cover every channel");
        left[target] -= 1;
        clusters[target].push(i);
    }
    clusters
}

/// Element-wise majority; ties resolve to 1.
fn majority(signs: &[SignVector], members: &[usize], len: usize) -> SignVector {
    SignVector::from_bits((0..len).map(|bit| {
        let ones = members.iter().filter(|&&m| signs[m].get(bit)).count();
        2 * ones >= members.len()
    }))
}

fn solve_from(signs: &[SignVector], caps: &[usize], start: usize, max_iters: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let len = signs[0].len();
    let mut centroids = farthest_point_seeds(signs, caps.len(), start);
    let mut current = assign(signs, &centroids, caps);
    let mut history = vec![objective_of(signs, &current)];
    for _ in 0..max_iters {
        centroids = current.iter().map(|c| majority(signs, c, len)).collect();
        let next = assign(signs, &centroids, caps);
        if same_partition(&next, &current) {
            break;
        }
        let obj = objective_of(signs, &next);
        if obj > *history.last().expect("non-empty") {
            break;
        }
        history.push(obj);
        current = next;
    }
    (current, history)
}

fn same_partition(a: &[Vec<usize>], b: &[Vec<usize>]) -> bool {
    let norm = |p: &[Vec<usize>]| -> BTreeSet<Vec<usize>> {
        p.iter()
            .map(|c| {
                let mut c = c.clone();
                c.sort_unstable();
                c
            })
            .collect()
    };
    norm(a) == norm(b)
}

/// Clusters the output channels, then sorts the input channels of each
/// cluster independently.
pub fn cluster_then_reorder(
    layer: usize,
    w: &QuantizedTensor,
    config: &ArrayConfig,
    criteria: SortCriteria,
    params: &ClusterParams,
) -> Result<LayerPlan> {
    config.validate()?;
    let clustering = balanced_cluster(w, config.array_cols, params)?;
    let sequences = clustering
        .clusters()
        .iter()
        .map(|members| Ok(sort_input_channels(&w.select_columns(members)?, criteria)))
        .collect::<Result<Vec<_>>>()?;
    LayerPlan::from_clustering(layer, w.rows(), &clustering, sequences)
}
