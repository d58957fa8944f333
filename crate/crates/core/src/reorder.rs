//! Input-channel reordering.
//!
//! With non-negative activations, computing every non-negative weight of an
//! output before any negative one makes its PSUM rise then fall, so it
//! crosses zero at most once. For a tile of several output channels sharing
//! one sequence, channels are ranked by how many non-negative weights they
//! carry and by their weight sum.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan::{LayerPlan, PlanEntry};
use crate::sim::sign;
use crate::tensor::{ArrayConfig, QuantizedTensor};

/// Permutation of input-channel indices; `order[cycle]` is the channel
/// accumulated at that cycle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ChannelSequence(Vec<usize>);

impl ChannelSequence {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        check_permutation(&order)?;
        Ok(Self(order))
    }

    pub fn identity(len: usize) -> Self {
        Self((0..len).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (pos, &ch) in self.0.iter().enumerate() {
            inv[ch] = pos;
        }
        Self(inv)
    }

    /// `out[cycle] = values[order[cycle]]`.
    pub fn apply<T: Copy>(&self, values: &[T]) -> Vec<T> {
        self.0.iter().map(|&i| values[i]).collect()
    }
}

impl TryFrom<Vec<usize>> for ChannelSequence {
    type Error = Error;

    fn try_from(order: Vec<usize>) -> Result<Self> {
        Self::new(order)
    }
}

impl From<ChannelSequence> for Vec<usize> {
    fn from(seq: ChannelSequence) -> Self {
        seq.0
    }
}

pub(crate) fn check_permutation(order: &[usize]) -> Result<()> {
    let mut seen = vec![false; order.len()];
    for &i in order {
        match seen.get_mut(i) {
            Some(s) if !*s => *s = true,
            Some(_) => {
                return Err(Error::NotPermutation {
                    len: order.len(),
                    detail: format!("index {i} repeats"),
                })
            }
            None => {
                return Err(Error::NotPermutation {
                    len: order.len(),
                    detail: format!("index {i} out of range"),
                })
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SortCriteria {
    /// Count of non-negative weights first, scaled weight sum second.
    #[default]
    SignFirst,
    /// Weight sum first, scaled non-negative count second.
    MagFirst,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMetrics {
    /// Non-negative weights per input channel.
    pub sign: Vec<i64>,
    /// Exact weight sum per input channel.
    pub mag: Vec<i64>,
}

pub fn channel_metrics(tile: &QuantizedTensor) -> ChannelMetrics {
    let (sign_counts, mags) = (0..tile.rows())
        .map(|r| {
            let row = tile.row(r);
            let nonneg = row.iter().filter(|&&w| sign(w as i32)).count() as i64;
            let sum = row.iter().map(|&w| w as i64).sum::<i64>();
            (nonneg, sum)
        })
        .unzip();
    ChannelMetrics {
        sign: sign_counts,
        mag: mags,
    }
}

/// Min-max scaling to [0, 1]; a constant input maps to all zeros.
pub fn minmax_scale(values: &[i64]) -> Vec<f64> {
    let (Some(&min), Some(&max)) = (values.iter().min(), values.iter().max()) else {
        return Vec::new();
    };
    if min == max {
        return vec![0.0; values.len()];
    }
    let range = (max - min) as f64;
    values.iter().map(|&v| (v - min) as f64 / range).collect()
}

/// Ranks input channels by `primary + minmax(secondary)`, descending.
///
/// The scaled term lies in [0, 1] and the primary term is an integer, so the
/// sum orders exactly like the pair `(primary, secondary)` except where it
/// ties across a primary step; those ties go to the larger primary. The
/// secondary comparison uses the unscaled integers (same denominator), so no
/// floating-point ties arise. Remaining ties keep ascending channel index.
pub fn sort_input_channels(tile: &QuantizedTensor, criteria: SortCriteria) -> ChannelSequence {
    let m = channel_metrics(tile);
    let (primary, secondary) = match criteria {
        SortCriteria::SignFirst => (&m.sign, &m.mag),
        SortCriteria::MagFirst => (&m.mag, &m.sign),
    };
    let sec_min = secondary.iter().copied().min().unwrap_or(0);
    let sec_range = secondary.iter().copied().max().unwrap_or(0) - sec_min;
    // primary + (s - min) / range, compared as primary * range + (s - min)
    let score = |i: usize| -> (i128, i64) {
        let p = primary[i] as i128;
        let s = (secondary[i] - sec_min) as i128;
        let combined = if sec_range == 0 { p } else { p * sec_range as i128 + s };
        (combined, primary[i])
    };
    let mut order: Vec<usize> = (0..tile.rows()).collect();
    order.sort_by(|&a, &b| match score(b).cmp(&score(a)) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    ChannelSequence(order)
}

/// Column block of a weight matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnTile {
    pub columns: Vec<usize>,
    pub weights: QuantizedTensor,
}

/// Splits `w` into consecutive blocks of `block` columns; the last block may
/// be narrower.
pub fn segment_matrix(w: &QuantizedTensor, block: usize) -> Result<Vec<ColumnTile>> {
    if block == 0 {
        return Err(Error::InvalidConfig("column block must be at least 1".into()));
    }
    consecutive_blocks(w.cols(), block)
        .into_iter()
        .map(|columns| {
            let weights = w.select_columns(&columns)?;
            Ok(ColumnTile { columns, weights })
        })
        .collect()
}

pub(crate) fn consecutive_blocks(k: usize, block: usize) -> Vec<Vec<usize>> {
    (0..k)
        .step_by(block)
        .map(|start| (start..(start + block).min(k)).collect())
        .collect()
}

/// Tiles `w` by array width and sorts the input channels of every tile.
pub fn direct_reorder(
    layer: usize,
    w: &QuantizedTensor,
    config: &ArrayConfig,
    criteria: SortCriteria,
) -> Result<LayerPlan> {
    config.validate()?;
    let entries = segment_matrix(w, config.array_cols)?
        .into_iter()
        .map(|tile| PlanEntry::new(tile.columns, sort_input_channels(&tile.weights, criteria)))
        .collect();
    LayerPlan::new(layer, w.rows(), w.cols(), config.array_cols, entries)
}
