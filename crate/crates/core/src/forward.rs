//! Multi-layer evaluation on the simulated array.
//!
//! Each layer is issued cluster by cluster according to its [`LayerPlan`].
//! Outputs are stored in the plan's output order, and the next layer reads
//! them through a fetch order composed from its own sequence and that storage
//! order. Reported outputs are always in logical channel order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan::{compose_cross_layer, LayerPlan};
use crate::sim::{run_tile, PsumTrace, SignFlipStats, TileSpec};
use crate::tensor::{Activation, ActivationBatch, ArrayConfig, ModelBundle, QuantizedTensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTrace {
    pub cluster: usize,
    pub trace: PsumTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSim {
    /// Pre-activation outputs, `samples x K`, logical channel order.
    pub outputs: Vec<i32>,
    pub stats: SignFlipStats,
    pub traces: Vec<ClusterTrace>,
    pub overflowed: bool,
}

/// Simulates one layer under `plan`.
///
/// `stored` holds the layer inputs as they sit in memory; `stored_order[p]`
/// names the logical channel at position `p` (`None` means logical order).
pub fn simulate_layer(
    w: &QuantizedTensor,
    stored: &ActivationBatch,
    stored_order: Option<&[usize]>,
    plan: &LayerPlan,
    config: &ArrayConfig,
    keep_traces: bool,
) -> Result<LayerSim> {
    plan.check_against(w, config)?;
    stored.check_channels(w.rows())?;
    let k = w.cols();
    let mut outputs = vec![0i32; stored.samples() * k];
    let mut stats = SignFlipStats::default();
    let mut traces = Vec::new();
    let mut overflowed = false;

    for (cluster, entry) in plan.entries().iter().enumerate() {
        let fetch = match stored_order {
            Some(order) => compose_cross_layer(order, &entry.sequence)?,
            None => entry.sequence.clone(),
        };
        let tile = TileSpec {
            weights: w,
            columns: &entry.members,
            weight_order: entry.sequence.as_slice(),
            fetch: fetch.as_slice(),
        };
        let result = run_tile(&tile, stored, config, keep_traces)?;
        let width = entry.members.len();
        for (n, row) in result.outputs.chunks(width).enumerate() {
            for (&ch, &v) in entry.members.iter().zip(row) {
                outputs[n * k + ch] = v;
            }
        }
        stats.merge(&result.stats);
        overflowed |= result.overflowed;
        traces.extend(result.traces.into_iter().map(|trace| ClusterTrace { cluster, trace }));
    }

    Ok(LayerSim {
        outputs,
        stats,
        traces,
        overflowed,
    })
}

/// Hook that may corrupt a layer's pre-activation outputs before they are
/// requantized for the next layer.
pub trait OutputInjector {
    /// `depth` is the accumulation length (input channels) of the layer.
    fn inject(&mut self, layer: usize, stats: &SignFlipStats, depth: usize, outputs: &mut [i32]);
}

/// ReLU (when enabled), arithmetic right shift, clamp to uint8.
#[inline]
pub fn requantize(value: i32, activation: Activation, shift: u32) -> u8 {
    let v = match activation {
        Activation::Relu => value.max(0),
        Activation::None => value,
    };
    (v >> shift).clamp(0, 255) as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRun {
    pub outputs: Vec<i32>,
    pub stats: SignFlipStats,
    pub traces: Vec<ClusterTrace>,
    pub overflowed: bool,
    /// Input channels of the layer.
    pub depth: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub layers: Vec<LayerRun>,
    pub stats: SignFlipStats,
}

impl ForwardResult {
    /// Final-layer outputs, `samples x K`, logical order.
    pub fn logits(&self) -> &[i32] {
        &self.layers.last().expect("at least one layer").outputs
    }

    /// Index of the largest output per sample; ties go to the lower channel.
    pub fn argmax(&self) -> Vec<usize> {
        let last = self.layers.last().expect("at least one layer");
        last.outputs
            .chunks(last.channels)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, i32::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }
}

/// Runs `acts` through every layer of `bundle`.
///
/// Without `plans`, each layer uses consecutive column blocks and natural
/// input order. With `plans` (one per layer), layer outputs stay in cluster
/// order between layers and only the reported outputs are un-permuted.
pub fn forward_pass(
    bundle: &ModelBundle,
    acts: &ActivationBatch,
    config: &ArrayConfig,
    plans: Option<&[LayerPlan]>,
    mut injector: Option<&mut dyn OutputInjector>,
    keep_traces: bool,
) -> Result<ForwardResult> {
    config.validate()?;
    acts.check_channels(bundle.input_channels())?;
    if let Some(plans) = plans {
        if plans.len() != bundle.layers().len() {
            return Err(Error::InvalidPlan(format!(
                "{} layer plans for a {}-layer bundle",
                plans.len(),
                bundle.layers().len()
            )));
        }
    }

    let samples = acts.samples();
    let mut stored = acts.clone();
    let mut stored_order: Option<Vec<usize>> = None;
    let mut layers = Vec::with_capacity(bundle.layers().len());
    let mut total = SignFlipStats::default();

    for (i, layer) in bundle.layers().iter().enumerate() {
        let w = &layer.weights;
        let owned;
        let plan = match plans {
            Some(p) => {
                if p[i].layer != i {
                    return Err(Error::InvalidPlan(format!(
                        "plan at position {i} is labelled layer {}",
                        p[i].layer
                    )));
                }
                &p[i]
            }
            None => {
                owned = LayerPlan::identity(i, w.rows(), w.cols(), config.array_cols)?;
                &owned
            }
        };
        let mut sim = simulate_layer(w, &stored, stored_order.as_deref(), plan, config, keep_traces)?;
        if let Some(inj) = injector.as_deref_mut() {
            inj.inject(i, &sim.stats, w.rows(), &mut sim.outputs);
        }

        let k = w.cols();
        let order = plan.output_order();
        let mut next = Vec::with_capacity(samples * k);
        for row in sim.outputs.chunks(k) {
            next.extend(
                order
                    .iter()
                    .map(|&ch| requantize(row[ch], layer.activation, layer.shift)),
            );
        }
        stored = ActivationBatch::new(samples, k, next)?;
        stored_order = Some(order.to_vec());

        total.merge(&sim.stats);
        layers.push(LayerRun {
            outputs: sim.outputs,
            stats: sim.stats,
            traces: sim.traces,
            overflowed: sim.overflowed,
            depth: w.rows(),
            channels: k,
        });
    }

    Ok(ForwardResult { layers, stats: total })
}

/// Plain integer reference: `out[n][k] = sum_c a[n][c] * w[c][k]`, no wrap.
pub fn reference_matmul(w: &QuantizedTensor, acts: &ActivationBatch) -> Vec<i64> {
    let mut out = vec![0i64; acts.samples() * w.cols()];
    for n in 0..acts.samples() {
        let a = acts.sample(n);
        for (c, &x) in a.iter().enumerate() {
            for k in 0..w.cols() {
                out[n * w.cols() + k] += x as i64 * w.get(c, k) as i64;
            }
        }
    }
    out
}
