//! Directory container for bundles and activation batches.
//!
//! A bundle directory holds `manifest.json` plus one raw file per layer:
//!
//! ```json
//! { "name": "toy", "seed": 7,
//!   "layers": [ { "name": "fc0", "rows": 4, "cols": 4, "activation": "relu",
//!                 "file": "fc0.bin", "shift": 0 } ] }
//! ```
//!
//! Each raw file holds `rows * cols` signed bytes, row-major. An activation
//! directory uses the same layout with `batches` entries of
//! `{name, samples, channels, file}` holding unsigned bytes, sample-major,
//! and an optional `labels` file of one unsigned byte per sample.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, ActivationBatch, BundleMetadata, Layer, ModelBundle, QuantizedTensor};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    pub file: String,
    #[serde(default)]
    pub shift: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleManifest {
    #[serde(flatten)]
    pub metadata: BundleMetadata,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchEntry {
    pub name: String,
    pub samples: usize,
    pub channels: usize,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchManifest {
    pub batches: Vec<BatchEntry>,
}

/// Activation batch plus optional class labels, as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledBatch {
    pub name: String,
    pub acts: ActivationBatch,
    pub labels: Option<Vec<u8>>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_raw(dir: &Path, file: &str, expected: usize) -> Result<Vec<u8>> {
    let path = dir.join(file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            what: path.display().to_string(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes)
}

fn check_file_name(file: &str) -> Result<()> {
    let p = Path::new(file);
    if file.is_empty() || p.is_absolute() || p.components().count() != 1 {
        return Err(Error::Unsupported(format!(
            "data file {file:?} must be a plain file name inside the container directory"
        )));
    }
    Ok(())
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<ModelBundle> {
    let dir = dir.as_ref();
    let manifest: BundleManifest = read_json(&dir.join(MANIFEST))?;
    if manifest.layers.is_empty() {
        return Err(Error::EmptyBundle);
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        check_file_name(&entry.file)?;
        if entry.rows == 0 || entry.cols == 0 {
            return Err(Error::InvalidDims {
                what: format!("layer {}", entry.name),
                rows: entry.rows,
                cols: entry.cols,
            });
        }
        let raw = read_raw(dir, &entry.file, entry.rows * entry.cols)?;
        let data = raw.into_iter().map(|b| b as i8).collect();
        layers.push(Layer {
            name: entry.name.clone(),
            weights: QuantizedTensor::new(entry.rows, entry.cols, data)?,
            activation: entry.activation,
            shift: entry.shift,
        });
    }
    ModelBundle::new(layers, manifest.metadata)
}

pub fn save_bundle(bundle: &ModelBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(bundle.layers().len());
    for (i, layer) in bundle.layers().iter().enumerate() {
        let file = format!("layer{i:03}.bin");
        let path = dir.join(&file);
        let raw: Vec<u8> = layer.weights.data().iter().map(|&v| v as u8).collect();
        fs::write(&path, raw).map_err(|e| Error::io(&path, e))?;
        entries.push(LayerEntry {
            name: layer.name.clone(),
            rows: layer.weights.rows(),
            cols: layer.weights.cols(),
            activation: layer.activation,
            file,
            shift: layer.shift,
        });
    }
    write_json(
        &dir.join(MANIFEST),
        &BundleManifest {
            metadata: bundle.metadata.clone(),
            layers: entries,
        },
    )
}

/// Loads every batch listed in an activation directory.
pub fn load_batches(dir: impl AsRef<Path>) -> Result<Vec<LabeledBatch>> {
    let dir = dir.as_ref();
    let manifest: BatchManifest = read_json(&dir.join(MANIFEST))?;
    if manifest.batches.is_empty() {
        return Err(Error::LengthMismatch {
            what: "activation manifest batches".into(),
            expected: 1,
            actual: 0,
        });
    }
    manifest
        .batches
        .iter()
        .map(|entry| {
            check_file_name(&entry.file)?;
            if entry.samples == 0 || entry.channels == 0 {
                return Err(Error::InvalidDims {
                    what: format!("activation batch {}", entry.name),
                    rows: entry.samples,
                    cols: entry.channels,
                });
            }
            let raw = read_raw(dir, &entry.file, entry.samples * entry.channels)?;
            let labels = match &entry.labels {
                Some(file) => {
                    check_file_name(file)?;
                    Some(read_raw(dir, file, entry.samples)?)
                }
                None => None,
            };
            Ok(LabeledBatch {
                name: entry.name.clone(),
                acts: ActivationBatch::new(entry.samples, entry.channels, raw)?,
                labels,
            })
        })
        .collect()
}

/// Loads the first batch of an activation directory.
pub fn load_batch(dir: impl AsRef<Path>) -> Result<LabeledBatch> {
    Ok(load_batches(dir)?.swap_remove(0))
}

pub fn save_batches(batches: &[LabeledBatch], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(batches.len());
    for (i, batch) in batches.iter().enumerate() {
        let file = format!("batch{i:03}.bin");
        let path: PathBuf = dir.join(&file);
        fs::write(&path, batch.acts.data()).map_err(|e| Error::io(&path, e))?;
        let labels = match &batch.labels {
            Some(labels) => {
                if labels.len() != batch.acts.samples() {
                    return Err(Error::LengthMismatch {
                        what: format!("labels of batch {}", batch.name),
                        expected: batch.acts.samples(),
                        actual: labels.len(),
                    });
                }
                let file = format!("batch{i:03}.labels");
                let path = dir.join(&file);
                fs::write(&path, labels).map_err(|e| Error::io(&path, e))?;
                Some(file)
            }
            None => None,
        };
        entries.push(BatchEntry {
            name: batch.name.clone(),
            samples: batch.acts.samples(),
            channels: batch.acts.channels(),
            file,
            labels,
        });
    }
    write_json(&dir.join(MANIFEST), &BatchManifest { batches: entries })
}
