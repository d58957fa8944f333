//! Accumulation-order-accurate model of an output-stationary systolic array.
//!
//! Every MAC owns one output value (one sample, one output channel) and keeps
//! its 24-bit partial sum local while activations and weights stream past in
//! the chosen input-channel order. Fill/drain skew is not modelled: the sign
//! behaviour of a PSUM depends only on the order of its accumulations.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reorder::ChannelSequence;
use crate::tensor::{ActivationBatch, ArrayConfig, QuantizedTensor, PSUM_BITS};

pub const PSUM_MIN: i32 = -(1 << (PSUM_BITS - 1));
pub const PSUM_MAX: i32 = (1 << (PSUM_BITS - 1)) - 1;
const PSUM_MASK: u32 = (1 << PSUM_BITS) - 1;

/// Sign bit as used by the flip count: 1 (`true`) for non-negative values,
/// 0 for negative ones. Zero counts as non-negative, so a PSUM that stays at
/// zero never flips.
#[inline]
pub fn sign(value: i32) -> bool {
    value >= 0
}

/// Reduces an integer to 24-bit two's complement.
#[inline]
pub fn wrap_psum(value: i64) -> i32 {
    let low = (value as u32) & PSUM_MASK;
    ((low << (32 - PSUM_BITS)) as i32) >> (32 - PSUM_BITS)
}

#[inline]
pub fn fits_psum(value: i64) -> bool {
    (PSUM_MIN as i64..=PSUM_MAX as i64).contains(&value)
}

/// Inverts one bit of a 24-bit PSUM. Bit 23 is the sign bit.
#[inline]
pub fn flip_psum_bit(value: i32, bit: u32) -> i32 {
    debug_assert!(bit < PSUM_BITS);
    wrap_psum(((value as u32 & PSUM_MASK) ^ (1 << bit)) as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacOutput {
    pub psum: i32,
    pub overflowed: bool,
}

/// One accumulation: `psum + a * w`, wrapped to 24 bits.
#[inline]
pub fn mac_step(psum: i32, a: u8, w: i8) -> MacOutput {
    let exact = psum as i64 + a as i64 * w as i64;
    MacOutput {
        psum: wrap_psum(exact),
        overflowed: !fits_psum(exact),
    }
}

/// Partial-sum history of one MAC computing one output value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsumTrace {
    /// Array row holding the output pixel (`sample % array_rows`).
    pub mac_row: usize,
    /// Array column within the tile.
    pub mac_col: usize,
    pub sample: usize,
    /// Logical output channel.
    pub channel: usize,
    /// PSUM after each cycle, starting with the initial 0.
    pub values: Vec<i32>,
    /// `flips[j]` is set when the sign of `values[j]` differs from `values[j + 1]`.
    pub flips: Vec<bool>,
    pub overflowed: bool,
}

impl PsumTrace {
    pub fn depth(&self) -> usize {
        self.flips.len()
    }

    pub fn output(&self) -> i32 {
        *self.values.last().expect("trace holds the initial value")
    }

    pub fn flip_count(&self) -> usize {
        self.flips.iter().filter(|&&f| f).count()
    }

    /// Product added in cycle `j`, recovered modulo 2^24.
    pub fn increment(&self, j: usize) -> i32 {
        wrap_psum(self.values[j + 1] as i64 - self.values[j] as i64)
    }
}

/// Evaluates the sign-flip count directly from the PSUM values, including the
/// transition out of the initial zero.
pub fn count_sign_flips(trace: &PsumTrace) -> usize {
    count_flips_in(&trace.values)
}

pub fn count_flips_in(values: &[i32]) -> usize {
    values.windows(2).filter(|p| sign(p[0]) != sign(p[1])).count()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignFlipStats {
    pub total_flips: u64,
    pub total_mac_cycles: u64,
    pub flip_rate: f64,
    /// `per_output_flips[f]` counts outputs whose PSUM flipped exactly `f` times.
    pub per_output_flips: Vec<u64>,
    pub outputs: u64,
}

impl SignFlipStats {
    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a PsumTrace>) -> Self {
        let mut stats = Self::default();
        for t in traces {
            stats.record(t.flip_count(), t.depth());
        }
        stats
    }

    pub fn record(&mut self, flips: usize, cycles: usize) {
        self.total_flips += flips as u64;
        self.total_mac_cycles += cycles as u64;
        self.outputs += 1;
        if self.per_output_flips.len() <= flips {
            self.per_output_flips.resize(flips + 1, 0);
        }
        self.per_output_flips[flips] += 1;
        self.refresh_rate();
    }

    pub fn merge(&mut self, other: &SignFlipStats) {
        self.total_flips += other.total_flips;
        self.total_mac_cycles += other.total_mac_cycles;
        self.outputs += other.outputs;
        if self.per_output_flips.len() < other.per_output_flips.len() {
            self.per_output_flips.resize(other.per_output_flips.len(), 0);
        }
        for (acc, &n) in self.per_output_flips.iter_mut().zip(&other.per_output_flips) {
            *acc += n;
        }
        self.refresh_rate();
    }

    fn refresh_rate(&mut self) {
        self.flip_rate = if self.total_mac_cycles == 0 {
            0.0
        } else {
            self.total_flips as f64 / self.total_mac_cycles as f64
        };
    }
}

/// Outputs are `samples x tile columns`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TileResult {
    pub outputs: Vec<i32>,
    pub traces: Vec<PsumTrace>,
    pub stats: SignFlipStats,
    pub overflowed: bool,
}

/// Simulates a weight tile on the array. All tile columns share the input
/// channel `order`.
pub fn simulate_tile(
    weights: &QuantizedTensor,
    acts: &ActivationBatch,
    config: &ArrayConfig,
    order: &ChannelSequence,
) -> Result<TileResult> {
    if order.len() != weights.rows() {
        return Err(Error::NotPermutation {
            len: weights.rows(),
            detail: format!("sequence has {} entries", order.len()),
        });
    }
    let cols: Vec<usize> = (0..weights.cols()).collect();
    run_tile(
        &TileSpec {
            weights,
            columns: &cols,
            weight_order: order.as_slice(),
            fetch: order.as_slice(),
        },
        acts,
        config,
        true,
    )
}

/// A tile as it is issued to the array.
pub(crate) struct TileSpec<'a> {
    pub weights: &'a QuantizedTensor,
    /// Output channels (columns of `weights`) mapped onto array columns.
    pub columns: &'a [usize],
    /// Weight row consumed at each cycle.
    pub weight_order: &'a [usize],
    /// Position in the stored activation vector read at each cycle.
    pub fetch: &'a [usize],
}

pub(crate) fn run_tile(
    tile: &TileSpec<'_>,
    acts: &ActivationBatch,
    config: &ArrayConfig,
    keep_traces: bool,
) -> Result<TileResult> {
    config.validate()?;
    let depth = tile.weights.rows();
    acts.check_channels(depth)?;
    if tile.columns.len() > config.array_cols {
        return Err(Error::DimensionMismatch(format!(
            "tile has {} columns but the array has {}",
            tile.columns.len(),
            config.array_cols
        )));
    }
    if tile.fetch.len() != depth || tile.weight_order.len() != depth {
        return Err(Error::DimensionMismatch(format!(
            "schedule covers {} / {} cycles, tile depth is {depth}",
            tile.weight_order.len(),
            tile.fetch.len()
        )));
    }
    debug_assert!(tile.fetch.iter().all(|&p| p < depth));

    let width = tile.columns.len();
    let mut outputs = Vec::with_capacity(acts.samples() * width);
    let mut traces = Vec::new();
    let mut stats = SignFlipStats::default();
    let mut any_overflow = false;
    let mut values = Vec::with_capacity(depth + 1);

    for n in 0..acts.samples() {
        let sample = acts.sample(n);
        for (mac_col, &channel) in tile.columns.iter().enumerate() {
            values.clear();
            values.push(0i32);
            let mut psum = 0i32;
            let mut overflowed = false;
            let mut flips = 0usize;
            for (&row, &pos) in tile.weight_order.iter().zip(tile.fetch) {
                let step = mac_step(psum, sample[pos], tile.weights.get(row, channel));
                overflowed |= step.overflowed;
                flips += usize::from(sign(psum) != sign(step.psum));
                psum = step.psum;
                values.push(psum);
            }
            outputs.push(psum);
            stats.record(flips, depth);
            any_overflow |= overflowed;
            if keep_traces {
                traces.push(PsumTrace {
                    mac_row: n % config.array_rows,
                    mac_col,
                    sample: n,
                    channel,
                    flips: values.windows(2).map(|p| sign(p[0]) != sign(p[1])).collect(),
                    values: values.clone(),
                    overflowed,
                });
            }
        }
    }

    Ok(TileResult {
        outputs,
        traces,
        stats,
        overflowed: any_overflow,
    })
}

/// One row of the per-cycle trace export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub layer: usize,
    pub cluster: usize,
    pub mac_row: usize,
    pub mac_col: usize,
    pub cycle: usize,
    pub psum: i32,
    pub flip: bool,
    pub error: bool,
}

/// Expands a trace into per-cycle records. `errors[j]` marks a timing error
/// in cycle `j` (the transition into `values[j + 1]`).
pub fn trace_records<'a>(
    layer: usize,
    cluster: usize,
    trace: &'a PsumTrace,
    errors: Option<&'a [bool]>,
) -> impl Iterator<Item = TraceRecord> + 'a {
    trace.values.iter().enumerate().map(move |(cycle, &psum)| {
        let (flip, error) = match cycle {
            0 => (false, false),
            c => (trace.flips[c - 1], errors.is_some_and(|e| e[c - 1])),
        };
        TraceRecord {
            layer,
            cluster,
            mac_row: trace.mac_row,
            mac_col: trace.mac_col,
            cycle,
            psum,
            flip,
            error,
        }
    })
}

pub fn write_trace_csv<W: Write>(writer: W, records: impl IntoIterator<Item = TraceRecord>) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for rec in records {
        csv.serialize(rec).map_err(csv_error)?;
    }
    csv.flush().map_err(|e| Error::io("<trace csv>", e))
}

fn csv_error(e: csv::Error) -> Error {
    Error::io("<trace csv>", std::io::Error::other(e.to_string()))
}
