//! Seeded synthetic bundles and datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::LabeledBatch;
use crate::error::{Error, Result};
use crate::forward::{forward_pass, requantize};
use crate::tensor::{Activation, ActivationBatch, ArrayConfig, BundleMetadata, Layer, ModelBundle, QuantizedTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightParams {
    /// Probability that a non-zero weight is positive.
    pub positive_fraction: f64,
    /// Probability that a weight is exactly zero.
    pub sparsity: f64,
    pub max_magnitude: u8,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            positive_fraction: 0.5,
            sparsity: 0.0,
            max_magnitude: 127,
        }
    }
}

impl WeightParams {
    fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.positive_fraction) || !unit.contains(&self.sparsity) {
            return Err(Error::InvalidConfig(
                "positive_fraction and sparsity must lie in [0, 1]".into(),
            ));
        }
        if self.max_magnitude == 0 || self.max_magnitude > 128 {
            return Err(Error::InvalidConfig("max_magnitude must be in 1..=128".into()));
        }
        Ok(())
    }
}

pub fn random_tensor<R: Rng>(rows: usize, cols: usize, params: &WeightParams, rng: &mut R) -> Result<QuantizedTensor> {
    params.validate()?;
    let max = params.max_magnitude as i32;
    let data = (0..rows * cols)
        .map(|_| {
            if rng.gen_bool(params.sparsity) {
                return 0;
            }
            if rng.gen_bool(params.positive_fraction) {
                rng.gen_range(1..=max.min(127)) as i8
            } else {
                (-rng.gen_range(1..=max)) as i8
            }
        })
        .collect();
    QuantizedTensor::new(rows, cols, data)
}

/// Activations uniform in `0..=max`, zero with probability `sparsity`.
pub fn random_acts<R: Rng>(
    samples: usize,
    channels: usize,
    max: u8,
    sparsity: f64,
    rng: &mut R,
) -> Result<ActivationBatch> {
    let data = (0..samples * channels)
        .map(|_| {
            if rng.gen_bool(sparsity) {
                0
            } else {
                rng.gen_range(0..=max)
            }
        })
        .collect();
    ActivationBatch::new(samples, channels, data)
}

/// Smallest shift that maps the given quantile of positive outputs into
/// the uint8 range.
fn shift_for(outputs: &[i32], quantile: f64) -> u32 {
    let mut pos: Vec<i32> = outputs.iter().copied().filter(|&v| v > 0).collect();
    if pos.is_empty() {
        return 0;
    }
    pos.sort_unstable();
    let idx = ((pos.len() - 1) as f64 * quantile).round() as usize;
    let target = pos[idx];
    (0..24).find(|&s| (target >> s) <= 255).unwrap_or(23)
}

/// Picks per-layer shifts so that the 95th percentile of each layer's
/// positive outputs on `acts` lands just inside uint8.
pub fn calibrate_shifts(bundle: ModelBundle, acts: &ActivationBatch, config: &ArrayConfig) -> Result<ModelBundle> {
    let mut shifts = vec![0; bundle.layers().len()];
    let mut current = bundle;
    for i in 0..shifts.len() {
        let run = forward_pass(&current, acts, config, None, None, false)?;
        shifts[i] = shift_for(&run.layers[i].outputs, 0.95);
        current = current.with_shifts(&shifts)?;
    }
    Ok(current)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BundleParams {
    /// Channel counts along the chain; `dims.len() - 1` layers.
    pub dims: Vec<usize>,
    pub weights: WeightParams,
    pub samples: usize,
    pub act_max: u8,
    pub act_sparsity: f64,
    pub seed: u64,
}

impl Default for BundleParams {
    fn default() -> Self {
        Self {
            dims: vec![64, 16],
            weights: WeightParams::default(),
            samples: 16,
            act_max: 255,
            act_sparsity: 0.0,
            seed: 0,
        }
    }
}

/// Random layer chain with calibrated shifts and a matching input batch.
/// Hidden layers use ReLU, the last layer none.
pub fn random_bundle(params: &BundleParams, config: &ArrayConfig) -> Result<(ModelBundle, ActivationBatch)> {
    if params.dims.len() < 2 || params.dims.contains(&0) {
        return Err(Error::InvalidConfig(
            "dims needs at least two positive channel counts".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_layers = params.dims.len() - 1;
    let layers = params
        .dims
        .windows(2)
        .enumerate()
        .map(|(i, d)| {
            Ok(Layer {
                name: format!("fc{i}"),
                weights: random_tensor(d[0], d[1], &params.weights, &mut rng)?,
                activation: if i + 1 == n_layers {
                    Activation::None
                } else {
                    Activation::Relu
                },
                shift: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let acts = random_acts(
        params.samples,
        params.dims[0],
        params.act_max,
        params.act_sparsity,
        &mut rng,
    )?;
    let bundle = ModelBundle::new(
        layers,
        BundleMetadata {
            name: "synthetic".into(),
            seed: Some(params.seed),
        },
    )?;
    Ok((calibrate_shifts(bundle, &acts, config)?, acts))
}

/// Random classifier plus a dataset it separates with a margin.
///
/// Candidate inputs are drawn at random and labelled with the clean
/// network's argmax; only candidates whose top logit beats the runner-up by
/// at least `margin` times the logit spread are kept, so clean accuracy is
/// 100% by construction and small perturbations do not flip labels.
pub fn toy_classifier(params: &BundleParams, margin: f64, config: &ArrayConfig) -> Result<(ModelBundle, LabeledBatch)> {
    let (bundle, _) = random_bundle(params, config)?;
    let classes = bundle.output_channels();
    if !(2..=256).contains(&classes) {
        return Err(Error::InvalidConfig("classifier needs 2..=256 classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_da7a);
    let inputs = bundle.input_channels();
    let mut kept: Vec<u8> = Vec::new();
    let mut labels = Vec::new();
    let mut rounds = 0;
    while labels.len() < params.samples {
        rounds += 1;
        if rounds > 200 {
            return Err(Error::InvalidConfig(format!(
                "could only find {} of {} samples with margin {margin}",
                labels.len(),
                params.samples
            )));
        }
        let cand = random_acts(
            params.samples * 4,
            inputs,
            params.act_max,
            params.act_sparsity,
            &mut rng,
        )?;
        let run = forward_pass(&bundle, &cand, config, None, None, false)?;
        let logits = run.logits();
        for (n, row) in logits.chunks(classes).enumerate() {
            if labels.len() == params.samples {
                break;
            }
            let mut sorted: Vec<i64> = row.iter().map(|&v| v as i64).collect();
            sorted.sort_unstable_by(|a, b| b.cmp(a));
            let spread = (sorted[0] - sorted[classes - 1]).max(1) as f64;
            if ((sorted[0] - sorted[1]) as f64) < margin * spread {
                continue;
            }
            let label = row
                .iter()
                .enumerate()
                .max_by_key(|&(i, &v)| (v, std::cmp::Reverse(i)))
                .unwrap()
                .0;
            labels.push(label as u8);
            kept.extend_from_slice(cand.sample(n));
        }
    }
    let acts = ActivationBatch::new(params.samples, inputs, kept)?;
    Ok((
        bundle,
        LabeledBatch {
            name: "toy".into(),
            acts,
            labels: Some(labels),
        },
    ))
}

/// Requantized activations a layer would hand to the next one.
pub fn requantize_all(outputs: &[i32], activation: Activation, shift: u32) -> Vec<u8> {
    outputs.iter().map(|&v| requantize(v, activation, shift)).collect()
}
