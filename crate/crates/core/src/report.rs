//! Machine-readable run reports.

use serde::{Deserialize, Serialize};

use crate::error_model::LayerErrorProfile;
use crate::plan::{ratio_serde, reduction_ratio, PlanMode};
use crate::reorder::SortCriteria;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub error_model: u64,
    pub cluster: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Seeds,
    pub tool_version: String,
    pub bundle: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_mode: Option<PlanMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criteria: Option<SortCriteria>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer: usize,
    pub name: String,
    pub depth: usize,
    pub cycles: u64,
    pub baseline_flips: u64,
    pub planned_flips: u64,
    pub baseline_flip_rate: f64,
    pub planned_flip_rate: f64,
    #[serde(with = "ratio_serde")]
    pub reduction_ratio: f64,
    pub ter_baseline: f64,
    pub ter_planned: f64,
    pub ber_baseline: f64,
    pub ber_planned: f64,
    pub bit_exact: bool,
}

impl LayerRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        layer: usize,
        name: &str,
        depth: usize,
        cycles: u64,
        flips: (u64, u64),
        rates: (f64, f64),
        errors: (LayerErrorProfile, LayerErrorProfile),
        bit_exact: bool,
    ) -> Self {
        Self {
            layer,
            name: name.to_string(),
            depth,
            cycles,
            baseline_flips: flips.0,
            planned_flips: flips.1,
            baseline_flip_rate: rates.0,
            planned_flip_rate: rates.1,
            reduction_ratio: reduction_ratio(rates.0, rates.1),
            ter_baseline: errors.0.ter,
            ter_planned: errors.1.ter,
            ber_baseline: errors.0.ber,
            ber_planned: errors.1.ber,
            bit_exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(with = "ratio_serde")]
    pub mean_reduction: f64,
    #[serde(with = "ratio_serde")]
    pub max_reduction: f64,
    pub baseline_flip_rate: f64,
    pub planned_flip_rate: f64,
    pub all_bit_exact: bool,
}

impl Summary {
    pub fn of(layers: &[LayerRecord], baseline_rate: f64, planned_rate: f64) -> Self {
        let n = layers.len().max(1) as f64;
        Self {
            mean_reduction: layers.iter().map(|l| l.reduction_ratio).sum::<f64>() / n,
            max_reduction: layers.iter().map(|l| l.reduction_ratio).fold(0.0, f64::max),
            baseline_flip_rate: baseline_rate,
            planned_flip_rate: planned_rate,
            all_bit_exact: layers.iter().all(|l| l.bit_exact),
        }
    }
}

/// Per-layer comparison of the natural schedule against a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub layers: Vec<LayerRecord>,
    pub summary: Summary,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub layer: usize,
    pub schedule: String,
    pub depth: usize,
    pub outputs: usize,
    pub cycles: u64,
    pub flip_rate: f64,
    pub error_events: u64,
    pub empirical_ter: f64,
    pub analytic_ter: f64,
    pub erroneous_outputs: u64,
    pub empirical_output_error_rate: f64,
    /// `1 - (1 - ter)^depth` with the layer-average TER.
    pub analytic_ber: f64,
    /// Mean over outputs of `1 - prod_j (1 - p_j)` from each output's own flips.
    pub trace_ber: f64,
    pub corrupted_values: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub p_flip: f64,
    pub p_base: f64,
    pub layers: Vec<InjectionRecord>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<f64>,
    /// Per-layer BER of the first run.
    pub layer_ber: Vec<f64>,
}

impl AccuracyStats {
    pub fn from_runs(runs: Vec<f64>, layer_ber: Vec<f64>) -> Self {
        let n = runs.len() as f64;
        let mean = runs.iter().sum::<f64>() / n.max(1.0);
        let std = if runs.len() > 1 {
            (runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            runs,
            layer_ber,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub point: String,
    pub p_flip: f64,
    pub p_base: f64,
    pub baseline: AccuracyStats,
    pub planned: AccuracyStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub samples: usize,
    pub repeats: usize,
    pub clean_accuracy: f64,
    pub points: Vec<AccuracyPoint>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub instance: String,
    pub heuristic_value: u64,
    pub oracle_value: u64,
    pub gap: u64,
    pub argmin: serde_json::Value,
    pub explored: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub records: Vec<OracleRecord>,
    pub skipped: Vec<String>,
    pub provenance: Provenance,
}

/// Flat rows for the CSV output format.
pub trait CsvRows {
    fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()>;
}

impl CsvRows for RunReport {
    fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for l in &self.layers {
            out.serialize(CsvLayer::from(l))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct CsvLayer<'a> {
    layer: usize,
    name: &'a str,
    baseline_flip_rate: f64,
    planned_flip_rate: f64,
    reduction_ratio: String,
    ter_baseline: f64,
    ter_planned: f64,
    ber_baseline: f64,
    ber_planned: f64,
    bit_exact: bool,
}

impl<'a> From<&'a LayerRecord> for CsvLayer<'a> {
    fn from(l: &'a LayerRecord) -> Self {
        Self {
            layer: l.layer,
            name: &l.name,
            baseline_flip_rate: l.baseline_flip_rate,
            planned_flip_rate: l.planned_flip_rate,
            reduction_ratio: if l.reduction_ratio.is_infinite() {
                "inf".into()
            } else {
                l.reduction_ratio.to_string()
            },
            ter_baseline: l.ter_baseline,
            ter_planned: l.ter_planned,
            ber_baseline: l.ber_baseline,
            ber_planned: l.ber_planned,
            bit_exact: l.bit_exact,
        }
    }
}

impl CsvRows for InjectionReport {
    fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.layers {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

impl CsvRows for AccuracyReport {
    fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            point: &'a str,
            p_flip: f64,
            p_base: f64,
            schedule: &'static str,
            mean: f64,
            std: f64,
        }
        let mut out = csv::Writer::from_writer(w);
        for p in &self.points {
            for (schedule, s) in [("baseline", &p.baseline), ("planned", &p.planned)] {
                out.serialize(Row {
                    point: &p.point,
                    p_flip: p.p_flip,
                    p_base: p.p_base,
                    schedule,
                    mean: s.mean,
                    std: s.std,
                })?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

impl CsvRows for OracleReport {
    fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            instance: &'a str,
            heuristic_value: u64,
            oracle_value: u64,
            gap: u64,
            argmin: String,
            explored: u64,
        }
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(Row {
                instance: &r.instance,
                heuristic_value: r.heuristic_value,
                oracle_value: r.oracle_value,
                gap: r.gap,
                argmin: r.argmin.to_string(),
                explored: r.explored,
            })?;
        }
        out.flush()?;
        Ok(())
    }
}
