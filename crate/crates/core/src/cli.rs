//! `readflow` command-line front end.
//!
//! Every command is a pure function of its inputs and configuration; all
//! randomness is seeded from the configuration and recorded in the report.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::{load_batch, load_bundle, save_batches, save_bundle, LabeledBatch};
use crate::cluster::{balanced_cluster_detailed, cluster_then_reorder, ClusterParams};
use crate::error::Error;
use crate::error_model::{
    ber_from_ter, derive_seed, inject_cycle_errors, output_error_probability, ter_from_stats, BerInjector, BitProfile,
    LayerErrorProfile, ProfileTable, TimingErrorModel,
};
use crate::forward::{forward_pass, ForwardResult, LayerRun};
use crate::oracle::{
    brute_force_clustering, brute_force_sequence, sequence_flips, MAX_CLUSTER_CHANNELS, MAX_SEQUENCE_CHANNELS,
};
use crate::plan::{LayerPlan, PlanFile, PlanMode};
use crate::reorder::{direct_reorder, segment_matrix, sort_input_channels, SortCriteria};
use crate::report::{
    AccuracyPoint, AccuracyReport, AccuracyStats, CsvRows, InjectionRecord, InjectionReport, LayerRecord, OracleRecord,
    OracleReport, Provenance, RunReport, Seeds, Summary,
};
use crate::sim::{trace_records, write_trace_csv, PsumTrace, SignFlipStats};
use crate::synth::{random_bundle, requantize_all, toy_classifier, BundleParams, WeightParams};
use crate::tensor::{ActivationBatch, ArrayConfig, ModelBundle};

pub const EXIT_VALIDATION: i32 = 65;
pub const EXIT_INTERNAL: i32 = 70;
pub const EXIT_IO: i32 = 74;

/// Run configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub array: ArrayConfig,
    /// Overrides the per-layer requantization shifts of the bundle.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shifts: Option<Vec<u32>>,
    pub cluster: ClusterParams,
    pub error_model: TimingErrorModel,
    pub profiles: ProfileTable,
    /// Operating points evaluated by `accuracy`; all profiles when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<String>>,
    pub repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            array: ArrayConfig::default(),
            shifts: None,
            cluster: ClusterParams::default(),
            error_model: TimingErrorModel::with_profile(0.01, 0.0, BitProfile::default(), 0)
                .expect("valid default model"),
            profiles: ProfileTable::default(),
            points: None,
            repeats: 5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> crate::Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })?;
        cfg.array.validate()?;
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn apply_shifts(&self, bundle: ModelBundle) -> crate::Result<ModelBundle> {
        match &self.shifts {
            Some(s) => bundle.with_shifts(s),
            None => Ok(bundle),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "readflow",
    version,
    about = "Sign-flip-aware reordering for systolic-array dataflows"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    Sequence,
    Clustering,
    Both,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the error-model and clustering seeds
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub acts: PathBuf,
    /// Plan file from `optimize`
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Error-model JSON, overriding the one in the config
    #[arg(long = "error-model")]
    pub error_model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build per-layer plans for a bundle
    Optimize {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_enum, default_value_t = PlanMode::Cluster)]
        mode: PlanMode,
        #[arg(long, value_enum, default_value_t = SortCriteria::SignFirst)]
        criteria: SortCriteria,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compare flip statistics, TER and BER of the natural schedule and a plan
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        /// Write per-cycle PSUM traces of the planned run as CSV
        #[arg(long)]
        traces: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Inject cycle-level timing errors into every layer's PSUM traces
    Inject {
        #[command(flatten)]
        model: ModelArgs,
        /// Write per-cycle traces of the planned run with error marks as CSV
        #[arg(long)]
        traces: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Classification accuracy under output-level error injection
    Accuracy {
        #[command(flatten)]
        model: ModelArgs,
        /// Named operating points; defaults to the config's list
        #[arg(long, value_delimiter = ',')]
        points: Option<Vec<String>>,
        /// Operating-point table (JSON); defaults to the config's table
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Plan built on the fly when --plan is absent
        #[arg(long, value_enum, default_value_t = PlanMode::Cluster)]
        mode: PlanMode,
        #[arg(long, value_enum, default_value_t = SortCriteria::SignFirst)]
        criteria: SortCriteria,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compare heuristics with exhaustive search on small layers
    Oracle {
        #[arg(long)]
        bundle: PathBuf,
        /// Activations for sequence instances; all-ones when absent
        #[arg(long)]
        acts: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SortCriteria::SignFirst)]
        criteria: SortCriteria,
        #[arg(long, value_enum, default_value_t = OracleKind::Both)]
        kind: OracleKind,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate a synthetic bundle and activation batch
    Gen {
        /// Output directory; receives `bundle/` and `acts/`
        #[arg(long)]
        out: PathBuf,
        /// Channel counts along the layer chain, e.g. 64,32,16
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        /// Probability that a non-zero weight is positive
        #[arg(long = "positive-fraction", default_value_t = 0.5)]
        positive_fraction: f64,
        #[arg(long, default_value_t = 0.0)]
        sparsity: f64,
        #[arg(long = "max-magnitude", default_value_t = 127)]
        max_magnitude: u8,
        #[arg(long = "act-sparsity", default_value_t = 0.0)]
        act_sparsity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Label the batch with the clean network's decisions
        #[arg(long)]
        classifier: bool,
        /// Minimum top-1 lead, as a fraction of the logit spread
        #[arg(long, default_value_t = 0.1)]
        margin: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Maps a failure to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_io() => EXIT_IO,
        Some(_) => EXIT_VALIDATION,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_IO,
        None => EXIT_INTERNAL,
    }
}

fn resolve_config(path: Option<&Path>, seed: Option<u64>, error_model: Option<&Path>) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = error_model {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        cfg.error_model = serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: p.to_owned(),
            source,
        })?;
    }
    if let Some(s) = seed {
        cfg.error_model = cfg.error_model.with_seed(s);
        cfg.cluster.seed = s;
    }
    Ok(cfg)
}

fn provenance(cfg: &RunConfig, bundle: &ModelBundle, plan: Option<&PlanFile>) -> Provenance {
    Provenance {
        config_hash: cfg.hash(),
        seeds: Seeds {
            error_model: cfg.error_model.seed,
            cluster: cfg.cluster.seed,
        },
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        bundle: bundle.metadata.name.clone(),
        plan_mode: plan.map(|p| p.mode),
        criteria: plan.map(|p| p.criteria),
    }
}

fn emit_bytes(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::io(p, e))?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn emit<T: Serialize + CsvRows>(report: &T, common: &CommonArgs) -> anyhow::Result<()> {
    let bytes = match common.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            buf
        }
    };
    emit_bytes(common.out.as_deref(), &bytes)
}

/// Plans for every layer of `bundle`.
pub fn optimize(
    bundle: &ModelBundle,
    cfg: &RunConfig,
    mode: PlanMode,
    criteria: SortCriteria,
) -> crate::Result<PlanFile> {
    let layers = bundle
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let w = &l.weights;
            match mode {
                PlanMode::Identity => LayerPlan::identity(i, w.rows(), w.cols(), cfg.array.array_cols),
                PlanMode::Direct => direct_reorder(i, w, &cfg.array, criteria),
                PlanMode::Cluster => cluster_then_reorder(i, w, &cfg.array, criteria, &cfg.cluster),
            }
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(PlanFile {
        mode,
        criteria,
        array: cfg.array,
        layers,
    })
}

fn plan_layers(plan: Option<&PlanFile>) -> Option<&[LayerPlan]> {
    plan.map(|p| p.layers.as_slice())
}

/// Clean baseline and planned forward passes with per-layer comparison.
pub fn simulate(
    bundle: &ModelBundle,
    acts: &ActivationBatch,
    cfg: &RunConfig,
    plan: Option<&PlanFile>,
    keep_traces: bool,
) -> crate::Result<(RunReport, ForwardResult)> {
    let base = forward_pass(bundle, acts, &cfg.array, None, None, false)?;
    let planned = forward_pass(bundle, acts, &cfg.array, plan_layers(plan), None, keep_traces)?;
    let model = &cfg.error_model;
    let layers: Vec<LayerRecord> = base
        .layers
        .iter()
        .zip(&planned.layers)
        .zip(bundle.layers())
        .enumerate()
        .map(|(i, ((b, p), layer))| {
            LayerRecord::new(
                i,
                &layer.name,
                b.depth,
                b.stats.total_mac_cycles,
                (b.stats.total_flips, p.stats.total_flips),
                (b.stats.flip_rate, p.stats.flip_rate),
                (
                    LayerErrorProfile::from_stats(&b.stats, b.depth, model),
                    LayerErrorProfile::from_stats(&p.stats, p.depth, model),
                ),
                b.outputs == p.outputs,
            )
        })
        .collect();
    let summary = Summary::of(&layers, base.stats.flip_rate, planned.stats.flip_rate);
    Ok((
        RunReport {
            layers,
            summary,
            provenance: provenance(cfg, bundle, plan),
        },
        planned,
    ))
}

fn layer_traces(run: &LayerRun) -> Vec<PsumTrace> {
    run.traces.iter().map(|t| t.trace.clone()).collect()
}

fn injection_record(layer: usize, schedule: &str, run: &LayerRun, model: &TimingErrorModel) -> InjectionRecord {
    let traces = layer_traces(run);
    let inj = inject_cycle_errors(layer, &traces, model);
    let analytic_ter = ter_from_stats(&run.stats, model);
    let trace_ber = traces.iter().map(|t| output_error_probability(t, model)).sum::<f64>() / traces.len().max(1) as f64;
    let corrupted_values = traces
        .iter()
        .zip(&inj.outputs)
        .filter(|(t, &o)| t.output() != o)
        .count();
    InjectionRecord {
        layer,
        schedule: schedule.to_string(),
        depth: run.depth,
        outputs: traces.len(),
        cycles: inj.cycles,
        flip_rate: run.stats.flip_rate,
        error_events: inj.error_events,
        empirical_ter: inj.empirical_ter(),
        analytic_ter,
        erroneous_outputs: inj.erroneous_outputs,
        empirical_output_error_rate: inj.empirical_output_error_rate(),
        analytic_ber: ber_from_ter(analytic_ter, run.depth),
        trace_ber,
        corrupted_values,
    }
}

/// `[layer][trace][cycle]` timing-error marks.
pub type ErrorMarks = Vec<Vec<Vec<bool>>>;

/// Cycle-level injection on the clean traces of each layer, for the natural
/// schedule and the plan. Layers are injected independently; corruption does
/// not propagate into the next layer's inputs.
pub fn inject(
    bundle: &ModelBundle,
    acts: &ActivationBatch,
    cfg: &RunConfig,
    plan: Option<&PlanFile>,
) -> crate::Result<(InjectionReport, ForwardResult, ErrorMarks)> {
    let model = &cfg.error_model;
    let base = forward_pass(bundle, acts, &cfg.array, None, None, true)?;
    let planned = forward_pass(bundle, acts, &cfg.array, plan_layers(plan), None, true)?;
    let mut layers = Vec::new();
    let mut planned_errors = Vec::new();
    for (i, (b, p)) in base.layers.iter().zip(&planned.layers).enumerate() {
        layers.push(injection_record(i, "baseline", b, model));
        layers.push(injection_record(i, "planned", p, model));
        let inj = inject_cycle_errors(i, &layer_traces(p), model);
        planned_errors.push(inj.traces.into_iter().map(|t| t.errors).collect());
    }
    Ok((
        InjectionReport {
            p_flip: model.p_flip,
            p_base: model.p_base,
            layers,
            provenance: provenance(cfg, bundle, plan),
        },
        planned,
        planned_errors,
    ))
}

fn accuracy_of(run: &ForwardResult, labels: &[u8]) -> f64 {
    let hits = run
        .argmax()
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| p == l as usize)
        .count();
    hits as f64 / labels.len() as f64
}

fn accuracy_runs(
    bundle: &ModelBundle,
    data: &LabeledBatch,
    array: &ArrayConfig,
    plans: Option<&[LayerPlan]>,
    model: &TimingErrorModel,
    repeats: usize,
) -> crate::Result<AccuracyStats> {
    let labels = data.labels.as_deref().expect("checked by caller");
    let mut runs = Vec::with_capacity(repeats);
    let mut first_ber = Vec::new();
    for r in 0..repeats {
        let mut inj = BerInjector::new(model.with_seed(derive_seed(model.seed, &[r as u64])));
        let run = forward_pass(bundle, &data.acts, array, plans, Some(&mut inj), false)?;
        runs.push(accuracy_of(&run, labels));
        if r == 0 {
            first_ber = inj.profiles.iter().map(|p| p.ber).collect();
        }
    }
    Ok(AccuracyStats::from_runs(runs, first_ber))
}

/// Accuracy of the natural schedule and of `plan` at every operating point,
/// `repeats` seeded injection runs each.
pub fn accuracy(
    bundle: &ModelBundle,
    data: &LabeledBatch,
    cfg: &RunConfig,
    plan: &PlanFile,
    points: &[String],
    repeats: usize,
) -> crate::Result<AccuracyReport> {
    let labels = data.labels.as_deref().ok_or_else(|| Error::LengthMismatch {
        what: format!("labels of batch {}", data.name),
        expected: data.acts.samples(),
        actual: 0,
    })?;
    if labels.len() != data.acts.samples() {
        return Err(Error::LengthMismatch {
            what: format!("labels of batch {}", data.name),
            expected: data.acts.samples(),
            actual: labels.len(),
        });
    }
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    let clean = forward_pass(bundle, &data.acts, &cfg.array, None, None, false)?;
    let mut out = Vec::with_capacity(points.len());
    for name in points {
        let point = cfg.profiles.get(name)?;
        let model = cfg.error_model.at(&point)?;
        out.push(AccuracyPoint {
            point: name.clone(),
            p_flip: point.p_flip,
            p_base: point.p_base,
            baseline: accuracy_runs(bundle, data, &cfg.array, None, &model, repeats)?,
            planned: accuracy_runs(bundle, data, &cfg.array, Some(&plan.layers), &model, repeats)?,
        });
    }
    Ok(AccuracyReport {
        samples: labels.len(),
        repeats,
        clean_accuracy: accuracy_of(&clean, labels),
        points: out,
        provenance: provenance(cfg, bundle, Some(plan)),
    })
}

/// Heuristic against exhaustive search for every small enough instance.
pub fn oracle(
    bundle: &ModelBundle,
    acts: &ActivationBatch,
    cfg: &RunConfig,
    criteria: SortCriteria,
    kind: OracleKind,
) -> crate::Result<OracleReport> {
    let clean = forward_pass(bundle, acts, &cfg.array, None, None, false)?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (i, layer) in bundle.layers().iter().enumerate() {
        let w = &layer.weights;
        let inputs = if i == 0 {
            acts.clone()
        } else {
            let prev = &bundle.layers()[i - 1];
            ActivationBatch::new(
                acts.samples(),
                w.rows(),
                requantize_all(&clean.layers[i - 1].outputs, prev.activation, prev.shift),
            )?
        };
        if matches!(kind, OracleKind::Sequence | OracleKind::Both) {
            if w.rows() > MAX_SEQUENCE_CHANNELS {
                skipped.push(format!("layer{i}/sequence: {} input channels", w.rows()));
            } else {
                for (t, tile) in segment_matrix(w, cfg.array.array_cols)?.iter().enumerate() {
                    let seq = sort_input_channels(&tile.weights, criteria);
                    let heuristic = sequence_flips(&tile.weights, &inputs, seq.as_slice());
                    let best = brute_force_sequence(&tile.weights, &inputs)?;
                    records.push(OracleRecord {
                        instance: format!("layer{i}/tile{t}"),
                        heuristic_value: heuristic,
                        oracle_value: best.best_value,
                        gap: heuristic - best.best_value,
                        argmin: serde_json::json!(best.best_solution),
                        explored: best.explored,
                    });
                }
            }
        }
        if matches!(kind, OracleKind::Clustering | OracleKind::Both) {
            if w.cols() > MAX_CLUSTER_CHANNELS {
                skipped.push(format!("layer{i}/clustering: {} output channels", w.cols()));
            } else {
                let heuristic = balanced_cluster_detailed(w, cfg.array.array_cols, &cfg.cluster)?;
                let best = brute_force_clustering(w, cfg.array.array_cols)?;
                records.push(OracleRecord {
                    instance: format!("layer{i}/clustering"),
                    heuristic_value: heuristic.objective as u64,
                    oracle_value: best.best_value,
                    gap: heuristic.objective as u64 - best.best_value,
                    argmin: serde_json::json!(best.best_solution),
                    explored: best.explored,
                });
            }
        }
    }
    Ok(OracleReport {
        records,
        skipped,
        provenance: provenance(cfg, bundle, None),
    })
}

fn load_inputs(model: &ModelArgs, cfg: &RunConfig) -> anyhow::Result<(ModelBundle, LabeledBatch, Option<PlanFile>)> {
    let bundle = cfg.apply_shifts(load_bundle(&model.bundle)?)?;
    let batch = load_batch(&model.acts)?;
    let plan = model.plan.as_deref().map(PlanFile::load).transpose()?;
    if let Some(p) = &plan {
        if p.layers.len() != bundle.layers().len() {
            return Err(Error::InvalidPlan(format!(
                "plan covers {} layers, bundle has {}",
                p.layers.len(),
                bundle.layers().len()
            ))
            .into());
        }
    }
    Ok((bundle, batch, plan))
}

fn write_traces(path: &Path, run: &ForwardResult, errors: Option<&[Vec<Vec<bool>>]>) -> anyhow::Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let records = run.layers.iter().enumerate().flat_map(|(l, layer)| {
        layer.traces.iter().enumerate().flat_map(move |(t, ct)| {
            let marks = errors.map(|e| e[l][t].as_slice());
            trace_records(l, ct.cluster, &ct.trace, marks)
        })
    });
    write_trace_csv(std::io::BufWriter::new(file), records)?;
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Optimize {
            bundle,
            mode,
            criteria,
            common,
        } => {
            let cfg = resolve_config(common.config.as_deref(), common.seed, None)?;
            let b = cfg.apply_shifts(load_bundle(&bundle)?)?;
            let plan = optimize(&b, &cfg, mode, criteria)?;
            if common.format == Format::Csv {
                bail!(Error::Unsupported("plans are written as JSON only".into()));
            }
            emit_bytes(common.out.as_deref(), plan.to_json().as_bytes())
        }
        Command::Simulate { model, traces, common } => {
            let cfg = resolve_config(common.config.as_deref(), common.seed, model.error_model.as_deref())?;
            let (bundle, batch, plan) = load_inputs(&model, &cfg)?;
            let (report, planned) = simulate(&bundle, &batch.acts, &cfg, plan.as_ref(), traces.is_some())?;
            if let Some(path) = traces {
                write_traces(&path, &planned, None)?;
            }
            emit(&report, &common)
        }
        Command::Inject { model, traces, common } => {
            let cfg = resolve_config(common.config.as_deref(), common.seed, model.error_model.as_deref())?;
            let (bundle, batch, plan) = load_inputs(&model, &cfg)?;
            let (report, planned, errors) = inject(&bundle, &batch.acts, &cfg, plan.as_ref())?;
            if let Some(path) = traces {
                write_traces(&path, &planned, Some(&errors))?;
            }
            emit(&report, &common)
        }
        Command::Accuracy {
            model,
            points,
            profiles,
            repeats,
            mode,
            criteria,
            common,
        } => {
            let mut cfg = resolve_config(common.config.as_deref(), common.seed, model.error_model.as_deref())?;
            if let Some(p) = profiles {
                cfg.profiles = ProfileTable::load(&p)?;
            }
            if let Some(r) = repeats {
                cfg.repeats = r;
            }
            if let Some(p) = points {
                cfg.points = Some(p);
            }
            let (bundle, batch, plan) = load_inputs(&model, &cfg)?;
            let plan = match plan {
                Some(p) => p,
                None => optimize(&bundle, &cfg, mode, criteria)?,
            };
            let names = cfg
                .points
                .clone()
                .unwrap_or_else(|| cfg.profiles.profiles.keys().cloned().collect());
            let report = accuracy(&bundle, &batch, &cfg, &plan, &names, cfg.repeats)?;
            emit(&report, &common)
        }
        Command::Oracle {
            bundle,
            acts,
            criteria,
            kind,
            common,
        } => {
            let cfg = resolve_config(common.config.as_deref(), common.seed, None)?;
            let b = cfg.apply_shifts(load_bundle(&bundle)?)?;
            let batch = match acts {
                Some(p) => load_batch(&p)?.acts,
                None => ActivationBatch::filled(1, b.input_channels(), 1)?,
            };
            let report = oracle(&b, &batch, &cfg, criteria, kind)?;
            emit(&report, &common)
        }
        Command::Gen {
            out,
            dims,
            samples,
            positive_fraction,
            sparsity,
            max_magnitude,
            act_sparsity,
            seed,
            classifier,
            margin,
            config,
        } => {
            let cfg = resolve_config(config.as_deref(), None, None)?;
            let params = BundleParams {
                dims,
                weights: WeightParams {
                    positive_fraction,
                    sparsity,
                    max_magnitude,
                },
                samples,
                act_max: 255,
                act_sparsity,
                seed,
            };
            let (bundle, batch) = if classifier {
                toy_classifier(&params, margin, &cfg.array)?
            } else {
                let (bundle, acts) = random_bundle(&params, &cfg.array)?;
                (
                    bundle,
                    LabeledBatch {
                        name: "inputs".into(),
                        acts,
                        labels: None,
                    },
                )
            };
            save_bundle(&bundle, out.join("bundle"))?;
            save_batches(std::slice::from_ref(&batch), out.join("acts"))
                .with_context(|| format!("writing activations under {}", out.display()))?;
            Ok(())
        }
    }
}

/// Stats of a layer under a plan, for callers that only need flip counts.
pub fn layer_stats(run: &ForwardResult, layer: usize) -> &SignFlipStats {
    &run.layers[layer].stats
}
