//! Deployable per-layer schedules: output-channel clusters, their input
//! sequences, and the address LUTs that fetch activations in that order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cluster::OutputClustering;
use crate::error::{Error, Result};
use crate::forward::simulate_layer;
use crate::reorder::{check_permutation, ChannelSequence, SortCriteria};
use crate::sim::SignFlipStats;
use crate::tensor::{ActivationBatch, ArrayConfig, QuantizedTensor};

/// `table[cycle]` is the channel address read at that cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct AddressLut(Vec<usize>);

impl AddressLut {
    pub fn table(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Reads `stored` through the table.
    pub fn apply<T: Copy>(&self, stored: &[T]) -> Vec<T> {
        self.0.iter().map(|&a| stored[a]).collect()
    }

    /// Address width times entries.
    pub fn bits(&self) -> usize {
        self.0.len() * address_bits(self.0.len())
    }
}

impl TryFrom<Vec<usize>> for AddressLut {
    type Error = Error;

    fn try_from(table: Vec<usize>) -> Result<Self> {
        check_permutation(&table)?;
        Ok(Self(table))
    }
}

impl From<AddressLut> for Vec<usize> {
    fn from(lut: AddressLut) -> Self {
        lut.0
    }
}

fn address_bits(entries: usize) -> usize {
    match entries {
        0 | 1 => 0,
        n => (usize::BITS - (n - 1).leading_zeros()) as usize,
    }
}

pub fn build_lut(sequence: &ChannelSequence) -> AddressLut {
    AddressLut(sequence.as_slice().to_vec())
}

/// Fetch order for a layer whose inputs are stored in the previous layer's
/// physical output order.
///
/// `prev_output_order[p]` is the logical channel stored at position `p`. The
/// result `f` satisfies `prev_output_order[f[cycle]] == curr_sequence[cycle]`.
pub fn compose_cross_layer(prev_output_order: &[usize], curr_sequence: &ChannelSequence) -> Result<ChannelSequence> {
    if prev_output_order.len() != curr_sequence.len() {
        return Err(Error::DimensionMismatch(format!(
            "previous layer stores {} channels, sequence covers {}",
            prev_output_order.len(),
            curr_sequence.len()
        )));
    }
    check_permutation(prev_output_order)?;
    let mut position = vec![0; prev_output_order.len()];
    for (p, &ch) in prev_output_order.iter().enumerate() {
        position[ch] = p;
    }
    ChannelSequence::new(curr_sequence.as_slice().iter().map(|&ch| position[ch]).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub members: Vec<usize>,
    pub sequence: ChannelSequence,
    pub lut: AddressLut,
}

impl PlanEntry {
    pub fn new(members: Vec<usize>, sequence: ChannelSequence) -> Self {
        let lut = build_lut(&sequence);
        Self { members, sequence, lut }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct RawLayerPlan {
    layer: usize,
    rows: usize,
    cols: usize,
    capacity: usize,
    entries: Vec<PlanEntry>,
    output_order: Vec<usize>,
}

/// Schedule for one layer. Outputs are stored in `output_order`, i.e. the
/// concatenation of the cluster members.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLayerPlan")]
pub struct LayerPlan {
    pub layer: usize,
    /// Input channels C.
    pub rows: usize,
    /// Output channels K.
    pub cols: usize,
    /// Array width the clusters were built for.
    pub capacity: usize,
    entries: Vec<PlanEntry>,
    output_order: Vec<usize>,
}

impl TryFrom<RawLayerPlan> for LayerPlan {
    type Error = Error;

    fn try_from(raw: RawLayerPlan) -> Result<Self> {
        let plan = Self::new(raw.layer, raw.rows, raw.cols, raw.capacity, raw.entries)?;
        if plan.output_order != raw.output_order {
            return Err(Error::InvalidPlan(format!(
                "layer {}: output_order does not match the cluster members",
                raw.layer
            )));
        }
        Ok(plan)
    }
}

impl LayerPlan {
    pub fn new(layer: usize, rows: usize, cols: usize, capacity: usize, entries: Vec<PlanEntry>) -> Result<Self> {
        let clusters: Vec<Vec<usize>> = entries.iter().map(|e| e.members.clone()).collect();
        OutputClustering::new(clusters, cols, capacity)
            .map_err(|e| Error::InvalidPlan(format!("layer {layer}: {e}")))?;
        for (i, e) in entries.iter().enumerate() {
            if e.sequence.len() != rows {
                return Err(Error::InvalidPlan(format!(
                    "layer {layer} cluster {i}: sequence covers {} of {rows} input channels",
                    e.sequence.len()
                )));
            }
            if e.lut.table() != e.sequence.as_slice() {
                return Err(Error::InvalidPlan(format!(
                    "layer {layer} cluster {i}: lut disagrees with sequence"
                )));
            }
        }
        let output_order = entries.iter().flat_map(|e| e.members.iter().copied()).collect();
        Ok(Self {
            layer,
            rows,
            cols,
            capacity,
            entries,
            output_order,
        })
    }

    /// Consecutive column blocks, natural input order.
    pub fn identity(layer: usize, rows: usize, cols: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("array width must be at least 1".into()));
        }
        let entries = crate::reorder::consecutive_blocks(cols, capacity)
            .into_iter()
            .map(|members| PlanEntry::new(members, ChannelSequence::identity(rows)))
            .collect();
        Self::new(layer, rows, cols, capacity, entries)
    }

    pub fn from_clustering(
        layer: usize,
        rows: usize,
        clustering: &OutputClustering,
        sequences: Vec<ChannelSequence>,
    ) -> Result<Self> {
        let entries = clustering
            .clusters()
            .iter()
            .cloned()
            .zip(sequences)
            .map(|(members, seq)| PlanEntry::new(members, seq))
            .collect();
        Self::new(layer, rows, clustering.channels(), clustering.capacity(), entries)
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn output_order(&self) -> &[usize] {
        &self.output_order
    }

    pub fn lut_bits(&self) -> usize {
        self.entries.iter().map(|e| e.lut.bits()).sum()
    }

    pub fn check_against(&self, w: &QuantizedTensor, config: &ArrayConfig) -> Result<()> {
        if self.rows != w.rows() || self.cols != w.cols() {
            return Err(Error::DimensionMismatch(format!(
                "plan for layer {} is {}x{}, weights are {}x{}",
                self.layer,
                self.rows,
                self.cols,
                w.rows(),
                w.cols()
            )));
        }
        if self.capacity > config.array_cols {
            return Err(Error::DimensionMismatch(format!(
                "plan for layer {} needs {} array columns, array has {}",
                self.layer, self.capacity, config.array_cols
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Identity,
    Direct,
    Cluster,
}

/// A plan file: one plan per bundle layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub mode: PlanMode,
    pub criteria: SortCriteria,
    pub array: ArrayConfig,
    pub layers: Vec<LayerPlan>,
}

impl PlanFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes") + "\n"
    }
}

/// `baseline / planned`; infinite when only the planned rate is zero and 1
/// when both are.
pub fn reduction_ratio(baseline: f64, planned: f64) -> f64 {
    if planned == 0.0 {
        if baseline == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        baseline / planned
    }
}

/// Serializes ratios, writing `"inf"` for an infinite value.
pub mod ratio_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad ratio {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanVerification {
    pub bit_exact: bool,
    pub baseline_flip_rate: f64,
    pub planned_flip_rate: f64,
    #[serde(with = "ratio_serde")]
    pub reduction_ratio: f64,
    pub lut_bits: usize,
    pub baseline: SignFlipStats,
    pub planned: SignFlipStats,
}

/// Runs one layer with the natural schedule and with `plan`, and compares.
pub fn verify_plan(
    plan: &LayerPlan,
    w: &QuantizedTensor,
    acts: &ActivationBatch,
    config: &ArrayConfig,
) -> Result<PlanVerification> {
    plan.check_against(w, config)?;
    let identity = LayerPlan::identity(plan.layer, w.rows(), w.cols(), config.array_cols)?;
    let base = simulate_layer(w, acts, None, &identity, config, false)?;
    let planned = simulate_layer(w, acts, None, plan, config, false)?;
    Ok(PlanVerification {
        bit_exact: base.outputs == planned.outputs,
        baseline_flip_rate: base.stats.flip_rate,
        planned_flip_rate: planned.stats.flip_rate,
        reduction_ratio: reduction_ratio(base.stats.flip_rate, planned.stats.flip_rate),
        lut_bits: plan.lut_bits(),
        baseline: base.stats,
        planned: planned.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::example_matrix;

    fn seq(v: &[usize]) -> ChannelSequence {
        ChannelSequence::new(v.to_vec()).unwrap()
    }

    #[test]
    fn lut_mirrors_sequence() {
        let lut = build_lut(&seq(&[2, 0, 3, 1]));
        assert_eq!(lut.table(), &[2, 0, 3, 1]);
        assert_eq!(build_lut(&ChannelSequence::identity(3)).table(), &[0, 1, 2]);
        let acts = [10u8, 11, 12, 13];
        let read = lut.apply(&acts);
        assert_eq!(read, vec![12, 10, 13, 11]);
        let inv = seq(&[2, 0, 3, 1]).inverse();
        assert_eq!(inv.apply(&read), acts.to_vec());
    }

    #[test]
    fn lut_size_for_1024_channels_is_under_2kb() {
        let lut = build_lut(&ChannelSequence::identity(1024));
        assert_eq!(lut.bits(), 1024 * 10);
        assert!(lut.bits() / 8 < 2048);
        assert_eq!(build_lut(&ChannelSequence::identity(1)).bits(), 0);
        assert_eq!(build_lut(&ChannelSequence::identity(5)).bits(), 15);
    }

    #[test]
    fn composition_examples() {
        assert_eq!(
            compose_cross_layer(&[0, 1, 2, 3], &seq(&[2, 0, 3, 1])).unwrap(),
            seq(&[2, 0, 3, 1])
        );
        assert_eq!(compose_cross_layer(&[1, 0], &seq(&[0, 1])).unwrap(), seq(&[1, 0]));
        assert_eq!(
            compose_cross_layer(&[2, 0, 3, 1], &seq(&[2, 0, 3, 1])).unwrap(),
            ChannelSequence::identity(4)
        );
        assert!(compose_cross_layer(&[0, 1, 2], &seq(&[0, 1])).is_err());
    }

    #[test]
    fn composition_reads_logical_stream() {
        let logical = [50u8, 51, 52, 53, 54];
        let stored_order = [3usize, 0, 4, 1, 2];
        let stored: Vec<u8> = stored_order.iter().map(|&c| logical[c]).collect();
        let want = seq(&[1, 4, 0, 2, 3]);
        let fetch = compose_cross_layer(&stored_order, &want).unwrap();
        assert_eq!(fetch.apply(&stored), want.apply(&logical));
    }

    #[test]
    fn plan_validation() {
        let ok = LayerPlan::new(
            0,
            4,
            4,
            2,
            vec![
                PlanEntry::new(vec![0, 2], seq(&[2, 0, 3, 1])),
                PlanEntry::new(vec![1, 3], ChannelSequence::identity(4)),
            ],
        )
        .unwrap();
        assert_eq!(ok.output_order(), &[0, 2, 1, 3]);

        let overlap = LayerPlan::new(
            0,
            4,
            4,
            2,
            vec![
                PlanEntry::new(vec![0, 2], ChannelSequence::identity(4)),
                PlanEntry::new(vec![2, 3], ChannelSequence::identity(4)),
            ],
        );
        assert!(matches!(overlap, Err(Error::InvalidPlan(_))));

        let mut bad = PlanEntry::new(vec![0, 1, 2, 3], ChannelSequence::identity(4));
        bad.lut = AddressLut(vec![1, 0, 2, 3]);
        assert!(LayerPlan::new(0, 4, 4, 4, vec![bad]).is_err());
    }

    #[test]
    fn corrupted_plan_json_is_rejected() {
        let plan = LayerPlan::identity(0, 4, 4, 2).unwrap();
        let good = serde_json::to_string(&plan).unwrap();
        assert_eq!(serde_json::from_str::<LayerPlan>(&good).unwrap(), plan);
        let corrupted = good.replacen("\"lut\":[0,1,2,3]", "\"lut\":[0,1,1,3]", 1);
        assert_ne!(corrupted, good);
        assert!(serde_json::from_str::<LayerPlan>(&corrupted).is_err());
        let reordered = good.replacen("\"output_order\":[0,1,2,3]", "\"output_order\":[1,0,2,3]", 1);
        assert!(serde_json::from_str::<LayerPlan>(&reordered).is_err());
    }

    #[test]
    fn verify_identity_plan() {
        let w = example_matrix();
        let acts = ActivationBatch::filled(2, 4, 1).unwrap();
        let cfg = ArrayConfig::new(2, 2).unwrap();
        let plan = LayerPlan::identity(0, 4, 4, 2).unwrap();
        let v = verify_plan(&plan, &w, &acts, &cfg).unwrap();
        assert!(v.bit_exact);
        assert_eq!(v.baseline, v.planned);
        assert_eq!(v.reduction_ratio, 1.0);
    }

    #[test]
    fn ratio_conventions() {
        assert_eq!(reduction_ratio(0.5, 0.25), 2.0);
        assert_eq!(reduction_ratio(0.0, 0.0), 1.0);
        assert!(reduction_ratio(0.1, 0.0).is_infinite());
        #[derive(Serialize, Deserialize)]
        struct R(#[serde(with = "ratio_serde")] f64);
        assert_eq!(serde_json::to_string(&R(f64::INFINITY)).unwrap(), "\"inf\"");
        assert!(serde_json::from_str::<R>("\"inf\"").unwrap().0.is_infinite());
        assert_eq!(serde_json::from_str::<R>("2.5").unwrap().0, 2.5);
    }
}
