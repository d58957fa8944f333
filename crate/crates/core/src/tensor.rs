//! In-memory data model: int8 weight matrices, uint8 activation batches,
//! array geometry, and multi-layer bundles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signed 8-bit weight matrix of shape `rows x cols` (input channels by
/// output channels), stored row-major. Filters larger than 1x1 are expected
/// to be flattened into the row dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
}

impl QuantizedTensor {
    pub fn new(rows: usize, cols: usize, data: Vec<i8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDims {
                what: "weight tensor".into(),
                rows,
                cols,
            });
        }
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "weight tensor".into(),
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a tensor from wider integers, rejecting anything outside int8.
    pub fn from_i32(rows: usize, cols: usize, values: &[i32]) -> Result<Self> {
        let data = values
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                i8::try_from(v).map_err(|_| Error::OutOfRange {
                    what: "weight tensor".into(),
                    index,
                    value: v as i64,
                    min: i8::MIN as i64,
                    max: i8::MAX as i64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::LengthMismatch {
                what: "weight row".into(),
                expected: cols,
                actual: bad.len(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[i8] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<i8> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    /// Sub-matrix holding the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.cols) {
            return Err(Error::DimensionMismatch(format!(
                "column {bad} out of range for {} columns",
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            data.extend(cols.iter().map(|&c| self.get(r, c)));
        }
        Self::new(self.rows, cols.len(), data)
    }
}

/// Batch of unsigned 8-bit activations, `samples x channels`, sample-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationBatch {
    samples: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ActivationBatch {
    pub fn new(samples: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if samples == 0 || channels == 0 {
            return Err(Error::InvalidDims {
                what: "activation batch".into(),
                rows: samples,
                cols: channels,
            });
        }
        if data.len() != samples * channels {
            return Err(Error::LengthMismatch {
                what: "activation batch".into(),
                expected: samples * channels,
                actual: data.len(),
            });
        }
        Ok(Self {
            samples,
            channels,
            data,
        })
    }

    pub fn filled(samples: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(samples, channels, vec![value; samples * channels])
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn sample(&self, n: usize) -> &[u8] {
        &self.data[n * self.channels..(n + 1) * self.channels]
    }

    pub fn check_channels(&self, expected: usize) -> Result<()> {
        if self.channels != expected {
            return Err(Error::DimensionMismatch(format!(
                "activation batch has {} channels, layer expects {expected}",
                self.channels
            )));
        }
        Ok(())
    }
}

pub const PSUM_BITS: u32 = 24;
pub const WEIGHT_BITS: u32 = 8;
pub const ACT_BITS: u32 = 8;

/// Geometry of the output-stationary array. Rows hold output pixels
/// (samples), columns hold output channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub array_rows: usize,
    pub array_cols: usize,
    #[serde(default = "default_psum_bits")]
    pub psum_bits: u32,
    #[serde(default = "default_operand_bits")]
    pub weight_bits: u32,
    #[serde(default = "default_operand_bits")]
    pub act_bits: u32,
}

fn default_psum_bits() -> u32 {
    PSUM_BITS
}

fn default_operand_bits() -> u32 {
    8
}

impl ArrayConfig {
    pub fn new(array_rows: usize, array_cols: usize) -> Result<Self> {
        let cfg = Self {
            array_rows,
            array_cols,
            psum_bits: PSUM_BITS,
            weight_bits: WEIGHT_BITS,
            act_bits: ACT_BITS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.array_rows == 0 || self.array_cols == 0 {
            return Err(Error::InvalidConfig(format!(
                "array must be at least 1x1, got {}x{}",
                self.array_rows, self.array_cols
            )));
        }
        if self.psum_bits != PSUM_BITS {
            return Err(Error::InvalidConfig(format!(
                "psum_bits must be {PSUM_BITS}, got {}",
                self.psum_bits
            )));
        }
        if self.weight_bits != WEIGHT_BITS || self.act_bits != ACT_BITS {
            return Err(Error::InvalidConfig(
                "only 8-bit weights and activations are supported".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ArrayConfig {
    /// 16 rows by 4 columns.
    fn default() -> Self {
        Self {
            array_rows: 16,
            array_cols: 4,
            psum_bits: PSUM_BITS,
            weight_bits: WEIGHT_BITS,
            act_bits: ACT_BITS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub weights: QuantizedTensor,
    pub activation: Activation,
    /// Arithmetic right shift applied before clamping to uint8 when this
    /// layer's output feeds the next layer.
    pub shift: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMetadata {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Ordered chain of layers. Layer `i` produces `cols` outputs consumed as the
/// `rows` inputs of layer `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelBundle {
    layers: Vec<Layer>,
    pub metadata: BundleMetadata,
}

impl ModelBundle {
    pub fn new(layers: Vec<Layer>, metadata: BundleMetadata) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyBundle);
        }
        for (i, pair) in layers.windows(2).enumerate() {
            let (a, b) = (&pair[0].weights, &pair[1].weights);
            if a.cols() != b.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} ({}) has {} outputs but layer {} ({}) expects {} inputs",
                    pair[0].name,
                    a.cols(),
                    i + 1,
                    pair[1].name,
                    b.rows()
                )));
            }
        }
        if let Some(l) = layers.iter().find(|l| l.shift >= PSUM_BITS) {
            return Err(Error::InvalidConfig(format!(
                "layer {} shift {} must be below {PSUM_BITS}",
                l.name, l.shift
            )));
        }
        Ok(Self { layers, metadata })
    }

    /// Single-layer bundle with ReLU and no requantization shift.
    pub fn single(weights: QuantizedTensor) -> Self {
        Self {
            layers: vec![Layer {
                name: "layer0".into(),
                weights,
                activation: Activation::Relu,
                shift: 0,
            }],
            metadata: BundleMetadata::default(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn output_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.cols()
    }

    /// Replaces the per-layer shifts, e.g. from a run configuration.
    pub fn with_shifts(mut self, shifts: &[u32]) -> Result<Self> {
        if shifts.len() != self.layers.len() {
            return Err(Error::LengthMismatch {
                what: "requantization shifts".into(),
                expected: self.layers.len(),
                actual: shifts.len(),
            });
        }
        for (layer, &s) in self.layers.iter_mut().zip(shifts) {
            layer.shift = s;
        }
        Self::new(self.layers, self.metadata)
    }
}

/// The 4x4 weight matrix used throughout the tests and the docs.
pub fn example_matrix() -> QuantizedTensor {
    QuantizedTensor::from_rows(&[
        vec![4, -5, 5, -1],
        vec![-10, 3, -2, 2],
        vec![9, -2, 3, -1],
        vec![-2, 3, -6, 3],
    ])
    .expect("static matrix is well formed")
}
