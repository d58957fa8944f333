//! Timing errors conditioned on PSUM sign flips.
//!
//! A MAC cycle whose accumulation flips the PSUM sign exercises the full
//! carry chain and fails with probability `p_flip`; any other cycle fails
//! with `p_base`. A failing cycle inverts one PSUM bit, drawn from
//! `bit_weights`. Operating points (process, voltage, temperature, aging) are
//! expressed only as `(p_flip, p_base)` pairs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::OutputInjector;
use crate::sim::{flip_psum_bit, wrap_psum, PsumTrace, SignFlipStats};
use crate::tensor::PSUM_BITS;

const BITS: usize = PSUM_BITS as usize;

/// Named shapes for the distribution of corrupted bit positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitProfile {
    /// Mass halves with every step down from bit 23.
    #[default]
    MsbGeometric,
    Uniform,
    SignOnly,
}

impl BitProfile {
    pub fn weights(self) -> Vec<f64> {
        let raw: Vec<f64> = match self {
            BitProfile::MsbGeometric => (0..BITS).map(|b| 0.5f64.powi((BITS - 1 - b) as i32)).collect(),
            BitProfile::Uniform => vec![1.0; BITS],
            BitProfile::SignOnly => (0..BITS).map(|b| f64::from(u8::from(b == BITS - 1))).collect(),
        };
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ErrorModelConfig", into = "ErrorModelConfig")]
pub struct TimingErrorModel {
    pub p_flip: f64,
    pub p_base: f64,
    bit_weights: Vec<f64>,
    pub seed: u64,
}

impl TimingErrorModel {
    pub fn new(p_flip: f64, p_base: f64, bit_weights: Vec<f64>, seed: u64) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidErrorModel(msg));
        if !(0.0..=1.0).contains(&p_base) || !(0.0..=1.0).contains(&p_flip) || p_base > p_flip {
            return bad(format!(
                "need 0 <= p_base <= p_flip <= 1, got p_base={p_base}, p_flip={p_flip}"
            ));
        }
        if bit_weights.len() != BITS {
            return bad(format!(
                "bit_weights has {} entries, expected {BITS}",
                bit_weights.len()
            ));
        }
        if bit_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("bit_weights must be finite and non-negative".into());
        }
        let total: f64 = bit_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("bit_weights sum to {total}, expected 1"));
        }
        Ok(Self {
            p_flip,
            p_base,
            bit_weights,
            seed,
        })
    }

    pub fn with_profile(p_flip: f64, p_base: f64, profile: BitProfile, seed: u64) -> Result<Self> {
        Self::new(p_flip, p_base, profile.weights(), seed)
    }

    /// Model that never fails.
    pub fn error_free(seed: u64) -> Self {
        Self::with_profile(0.0, 0.0, BitProfile::default(), seed).expect("valid")
    }

    pub fn bit_weights(&self) -> &[f64] {
        &self.bit_weights
    }

    pub fn at(&self, point: &OperatingPoint) -> Result<Self> {
        Self::new(point.p_flip, point.p_base, self.bit_weights.clone(), self.seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn cycle_probability(&self, flipped: bool) -> f64 {
        if flipped {
            self.p_flip
        } else {
            self.p_base
        }
    }

    fn bit_sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(&self.bit_weights).expect("validated weights")
    }
}

/// JSON form: `{p_flip, p_base, bit_weights | bit_profile_name, seed}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorModelConfig {
    pub p_flip: f64,
    pub p_base: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_profile_name: Option<BitProfile>,
    #[serde(default)]
    pub seed: u64,
}

impl TryFrom<ErrorModelConfig> for TimingErrorModel {
    type Error = Error;

    fn try_from(c: ErrorModelConfig) -> Result<Self> {
        let weights = match (c.bit_weights, c.bit_profile_name) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidErrorModel(
                    "give either bit_weights or bit_profile_name, not both".into(),
                ))
            }
            (Some(w), None) => w,
            (None, profile) => profile.unwrap_or_default().weights(),
        };
        Self::new(c.p_flip, c.p_base, weights, c.seed)
    }
}

impl From<TimingErrorModel> for ErrorModelConfig {
    fn from(m: TimingErrorModel) -> Self {
        Self {
            p_flip: m.p_flip,
            p_base: m.p_base,
            bit_weights: Some(m.bit_weights),
            bit_profile_name: None,
            seed: m.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingPoint {
    pub p_flip: f64,
    pub p_base: f64,
}

/// User-editable table of named operating points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTable {
    pub profiles: BTreeMap<String, OperatingPoint>,
}

impl Default for ProfileTable {
    fn default() -> Self {
        let points = [
            ("nominal", 1e-3, 1e-6),
            ("vt5", 5e-3, 5e-6),
            ("vt5_aged10y", 2e-2, 2e-5),
        ];
        Self {
            profiles: points
                .into_iter()
                .map(|(name, p_flip, p_base)| (name.to_string(), OperatingPoint { p_flip, p_base }))
                .collect(),
        }
    }
}

impl ProfileTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })
    }

    pub fn get(&self, name: &str) -> Result<OperatingPoint> {
        self.profiles
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidErrorModel(format!("unknown operating point {name:?}")))
    }
}

/// Expected per-cycle error probability of a layer with the given flip rate.
pub fn ter_from_stats(stats: &SignFlipStats, model: &TimingErrorModel) -> f64 {
    model.p_flip * stats.flip_rate + model.p_base * (1.0 - stats.flip_rate)
}

/// Probability that at least one of `n` independent MAC cycles fails.
pub fn ber_from_ter(ter: f64, n: usize) -> f64 {
    if ter >= 1.0 {
        return 1.0;
    }
    -(n as f64 * (-ter).ln_1p()).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerErrorProfile {
    pub ter: f64,
    pub n_macs: usize,
    pub ber: f64,
}

impl LayerErrorProfile {
    pub fn new(ter: f64, n_macs: usize) -> Self {
        Self {
            ter,
            n_macs,
            ber: ber_from_ter(ter, n_macs),
        }
    }

    pub fn from_stats(stats: &SignFlipStats, n_macs: usize, model: &TimingErrorModel) -> Self {
        Self::new(ter_from_stats(stats, model), n_macs)
    }
}

/// Error probability of one output given its own trace:
/// `1 - prod_j (1 - p_j)` with `p_j` set by cycle `j`'s flip.
pub fn output_error_probability(trace: &PsumTrace, model: &TimingErrorModel) -> f64 {
    let log_clean: f64 = trace.flips.iter().map(|&f| (-model.cycle_probability(f)).ln_1p()).sum();
    -log_clean.exp_m1()
}

/// Mixes identifiers into a seed so every (layer, output) stream is
/// independent of evaluation order.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base;
    for &p in parts.iter().chain(std::iter::once(&(parts.len() as u64))) {
        state = splitmix64(state ^ splitmix64(p));
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedTrace {
    pub sample: usize,
    pub channel: usize,
    /// PSUM trajectory with corruptions carried forward.
    pub values: Vec<i32>,
    /// `errors[j]` marks a timing error in cycle `j`.
    pub errors: Vec<bool>,
    /// Bit hit by each error, in cycle order.
    pub bits: Vec<u32>,
}

impl InjectedTrace {
    pub fn error_count(&self) -> usize {
        self.bits.len()
    }

    pub fn output(&self) -> i32 {
        *self.values.last().expect("initial value present")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleInjection {
    pub traces: Vec<InjectedTrace>,
    /// Final value of every trace, in trace order.
    pub outputs: Vec<i32>,
    pub error_events: u64,
    pub cycles: u64,
    /// Outputs hit by at least one error.
    pub erroneous_outputs: u64,
}

impl CycleInjection {
    pub fn empirical_ter(&self) -> f64 {
        ratio(self.error_events, self.cycles)
    }

    pub fn empirical_output_error_rate(&self) -> f64 {
        ratio(self.erroneous_outputs, self.traces.len() as u64)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Replays clean traces with timing errors.
///
/// Each cycle fails with the probability selected by its clean flip
/// annotation. A failure inverts one bit of that cycle's result, and the
/// corrupted value feeds the following accumulations. Randomness for a trace
/// derives from `(model.seed, layer, sample, channel)`.
pub fn inject_cycle_errors(layer: usize, traces: &[PsumTrace], model: &TimingErrorModel) -> CycleInjection {
    let sampler = model.bit_sampler();
    let mut out = CycleInjection {
        traces: Vec::with_capacity(traces.len()),
        outputs: Vec::with_capacity(traces.len()),
        error_events: 0,
        cycles: 0,
        erroneous_outputs: 0,
    };
    for t in traces {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            model.seed,
            &[layer as u64, t.sample as u64, t.channel as u64],
        ));
        let mut values = Vec::with_capacity(t.values.len());
        let mut errors = Vec::with_capacity(t.depth());
        let mut bits = Vec::new();
        let mut psum = t.values[0];
        values.push(psum);
        for (j, &flipped) in t.flips.iter().enumerate() {
            psum = wrap_psum(psum as i64 + t.increment(j) as i64);
            let hit = rng.gen::<f64>() < model.cycle_probability(flipped);
            if hit {
                let bit = sampler.sample(&mut rng) as u32;
                psum = flip_psum_bit(psum, bit);
                bits.push(bit);
            }
            errors.push(hit);
            values.push(psum);
        }
        out.cycles += t.depth() as u64;
        out.error_events += bits.len() as u64;
        out.erroneous_outputs += u64::from(!bits.is_empty());
        out.outputs.push(psum);
        out.traces.push(InjectedTrace {
            sample: t.sample,
            channel: t.channel,
            values,
            errors,
            bits,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputInjection {
    pub outputs: Vec<i32>,
    pub corrupted: usize,
}

/// Corrupts each output independently with probability `ber` by inverting
/// one bit drawn from the model's bit weights.
///
/// Every output consumes the same draws whether or not it is hit, so two
/// calls with the same seed and different `ber` corrupt nested sets of
/// outputs with identical bits.
pub fn inject_output_errors(outputs: &[i32], ber: f64, model: &TimingErrorModel) -> Result<OutputInjection> {
    if !(0.0..=1.0).contains(&ber) {
        return Err(Error::InvalidErrorModel(format!("ber {ber} outside [0, 1]")));
    }
    let sampler = model.bit_sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let mut corrupted = 0;
    let outputs = outputs
        .iter()
        .map(|&v| {
            let u = rng.gen::<f64>();
            let bit = sampler.sample(&mut rng) as u32;
            if u < ber {
                corrupted += 1;
                flip_psum_bit(v, bit)
            } else {
                v
            }
        })
        .collect();
    Ok(OutputInjection { outputs, corrupted })
}

/// Forward-pass hook applying output-level injection at the BER implied by
/// each layer's own flip statistics.
#[derive(Debug, Clone)]
pub struct BerInjector {
    model: TimingErrorModel,
    pub profiles: Vec<LayerErrorProfile>,
    pub corrupted: Vec<usize>,
}

impl BerInjector {
    pub fn new(model: TimingErrorModel) -> Self {
        Self {
            model,
            profiles: Vec::new(),
            corrupted: Vec::new(),
        }
    }
}

impl OutputInjector for BerInjector {
    fn inject(&mut self, layer: usize, stats: &SignFlipStats, depth: usize, outputs: &mut [i32]) {
        let profile = LayerErrorProfile::from_stats(stats, depth, &self.model);
        let layer_model = self.model.with_seed(derive_seed(self.model.seed, &[layer as u64]));
        let result = inject_output_errors(outputs, profile.ber, &layer_model)
            .expect("ber derived from a validated model lies in [0, 1]");
        outputs.copy_from_slice(&result.outputs);
        self.profiles.push(profile);
        self.corrupted.push(result.corrupted);
    }
}
