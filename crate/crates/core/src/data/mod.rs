//! Frame sequences, synthetic lane scenes, index files, augmentation, and raster codecs.
//!
//! Frames are `3×H×W` tensors with values in `[0, 1]`; labels are binary maps
//! of the last frame.

mod augment;
mod index;
mod pnm;
mod scene;

pub use augment::{augment, Augment};
pub use index::{load_index, sample_frames, sliding_windows, write_index, DatasetIndex, Record, Subset, SEQ, TABLE_I};
pub use pnm::{decode_pnm, encode_pgm, encode_ppm, read_image, read_label, write_image, write_label};
pub use scene::{generate_sequence, synthetic_sample, synthetic_set, MAX_LANE_FRACTION, MIN_LANE_FRACTION, Dash, EgoMotion, LaneSpec, Occluder, Perturbations, SceneConfig, ScenePreset, Shadow};

use std::path::PathBuf;

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("degenerate scene: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: missing file {missing}")]
    Missing { path: PathBuf, line: usize, missing: PathBuf },
    #[error("image decode: {0}")]
    Decode(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Binary `H×W` map stored as bytes in `{0, 1}`, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    /// Nonzero bytes become 1.
    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(DataError::Invalid(format!("{} values for a {height}×{width} map", data.len())));
        }
        Ok(Self { height, width, data: data.into_iter().map(|v| u8::from(v != 0)).collect() })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.data[row * self.width + col] = u8::from(on);
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count_ones() as f64 / self.data.len().max(1) as f64
    }

    /// `(row, col)` of every set pixel in scan order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        (0..self.data.len()).filter(|&i| self.data[i] != 0).map(|i| (i / self.width, i % self.width)).collect()
    }

    /// `H×W` tensor of 0/1 values.
    pub fn to_tensor<E: crate::tensor::Element>(&self) -> Tensor<E> {
        let data = self.data.iter().map(|&v| if v != 0 { E::one() } else { E::zero() }).collect();
        Tensor::from_vec(&[self.height, self.width], data).expect("map shape")
    }
}

/// `S` frames plus the optional label of the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frames: Vec<Tensor<f32>>,
    pub label: Option<BinaryMap>,
    pub source: String,
}

impl Sample {
    /// Checks the frame and label invariants; returns `(H, W)`.
    pub fn validate(&self) -> Result<(usize, usize)> {
        let first = self.frames.first().ok_or_else(|| DataError::Invalid("sample without frames".into()))?;
        let shape = first.shape().to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(DataError::Invalid(format!("frame shape {shape:?} is not 3×H×W")));
        }
        for f in &self.frames {
            if f.shape() != shape.as_slice() {
                return Err(DataError::Invalid(format!("frame shape {:?} differs from {shape:?}", f.shape())));
            }
            if f.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(DataError::Invalid("frame value outside [0, 1]".into()));
            }
        }
        if let Some(l) = &self.label {
            if (l.height, l.width) != (shape[1], shape[2]) {
                return Err(DataError::Invalid(format!("label {}×{} vs frames {}×{}", l.height, l.width, shape[1], shape[2])));
            }
        }
        Ok((shape[1], shape[2]))
    }
}

/// Stacks samples into an `N·S×3×H×W` batch (sample-major).
pub fn stack_frames(samples: &[&Sample]) -> Result<Tensor<f32>> {
    let first = samples.first().ok_or_else(|| DataError::Invalid("empty batch".into()))?;
    let (h, w) = first.validate()?;
    let s = first.frames.len();
    let mut data = Vec::with_capacity(samples.len() * s * 3 * h * w);
    for sample in samples {
        if sample.validate()? != (h, w) || sample.frames.len() != s {
            return Err(DataError::Invalid("samples in a batch differ in size or length".into()));
        }
        for f in &sample.frames {
            data.extend_from_slice(f.data());
        }
    }
    Ok(Tensor::from_vec(&[samples.len() * s, 3, h, w], data).expect("batch shape"))
}

/// Stacks the labels into an `N×H×W` tensor of 0/1 values.
pub fn stack_labels(samples: &[&Sample]) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut hw = None;
    for sample in samples {
        let l = sample.label.as_ref().ok_or_else(|| DataError::Invalid(format!("{} has no label", sample.source)))?;
        if *hw.get_or_insert((l.height, l.width)) != (l.height, l.width) {
            return Err(DataError::Invalid("labels in a batch differ in size".into()));
        }
        data.extend(l.data.iter().map(|&v| f32::from(v)));
    }
    let (h, w) = hw.ok_or_else(|| DataError::Invalid("empty batch".into()))?;
    Ok(Tensor::from_vec(&[samples.len(), h, w], data).expect("label shape"))
}
