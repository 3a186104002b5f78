//! Masked sequential autoencoder pretraining.
//!
//! Every frame of a sequence is tiled into `16×16` patches and a random subset
//! of patches is zeroed, independently per frame. The network reconstructs
//! the unmasked last frame and is trained on the full-image mean squared error.
//!
//! ```
//! use laneforge::pretrain::sample_mask;
//!
//! let m = sample_mask(128, 256, 0.5, 7).unwrap();
//! assert_eq!((m.grid_rows, m.grid_cols), (8, 16));
//! assert_eq!(m.masked.len(), 64);
//! ```

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::data::{stack_frames, Sample};
use crate::model::{model_forward, Checkpoint, ModelError, Phase};
use crate::optim::Optimizer;
use crate::tensor::{Element, Tensor, TensorError};
use crate::train::{batch_order, mix_seed, EpochStats, TrainError};

pub const PATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPattern {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub patch: usize,
    /// Masked patch indices (row-major over the grid), ascending.
    pub masked: Vec<usize>,
}

impl MaskPattern {
    pub fn patch_count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn ratio(&self) -> f64 {
        self.masked.len() as f64 / self.patch_count().max(1) as f64
    }
}

/// Uniform subset of exactly `round(ratio · patches)` patches of size 16.
pub fn sample_mask(height: usize, width: usize, ratio: f64, seed: u64) -> Result<MaskPattern, TensorError> {
    sample_mask_with_patch(height, width, PATCH, ratio, seed)
}

pub fn sample_mask_with_patch(height: usize, width: usize, patch: usize, ratio: f64, seed: u64) -> Result<MaskPattern, TensorError> {
    let invalid = |detail: String| TensorError::InvalidArgument { op: "sample_mask", detail };
    if patch == 0 || height == 0 || width == 0 || height % patch != 0 || width % patch != 0 {
        return Err(invalid(format!("{height}×{width} is not tiled by {patch}×{patch} patches")));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(invalid(format!("ratio {ratio} outside [0, 1]")));
    }
    let (rows, cols) = (height / patch, width / patch);
    let n = rows * cols;
    let k = (ratio * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked = index::sample(&mut rng, n, k).into_vec();
    masked.sort_unstable();
    Ok(MaskPattern { grid_rows: rows, grid_cols: cols, patch, masked })
}

/// Zeroes the masked patches of a `C×H×W` frame.
pub fn apply_mask<E: Element>(frame: &Tensor<E>, mask: &MaskPattern) -> Result<Tensor<E>, TensorError> {
    let s = frame.shape();
    let (h, w) = (mask.grid_rows * mask.patch, mask.grid_cols * mask.patch);
    if s.len() != 3 || s[1] != h || s[2] != w {
        return Err(TensorError::ShapeMismatch { op: "apply_mask", lhs: s.to_vec(), rhs: vec![s.first().copied().unwrap_or(0), h, w] });
    }
    let mut out = frame.clone();
    let d = out.data_mut();
    for &p in &mask.masked {
        let (r0, c0) = ((p / mask.grid_cols) * mask.patch, (p % mask.grid_cols) * mask.patch);
        for ch in 0..s[0] {
            for r in r0..r0 + mask.patch {
                let row = ch * h * w + r * w;
                d[row + c0..row + c0 + mask.patch].fill(E::zero());
            }
        }
    }
    Ok(out)
}

/// Mean squared error over every pixel, channel, and sample.
pub fn reconstruction_loss<'t, E: Element>(recon: Var<'t, E>, original: Var<'t, E>) -> Result<Var<'t, E>, TensorError> {
    if recon.shape() != original.shape() {
        return Err(TensorError::ShapeMismatch { op: "reconstruction_loss", lhs: recon.shape(), rhs: original.shape() });
    }
    let d = recon.sub(original)?;
    d.mul(d)?.mean()
}

/// Masks every frame of an `N·S×3×H×W` batch independently; frame seeds derive from `seed`.
pub fn mask_batch(frames: &Tensor<f32>, ratio: f64, patch: usize, seed: u64) -> Result<Tensor<f32>, TensorError> {
    let s = frames.shape().to_vec();
    let plane = s[1..].iter().product::<usize>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(frames.len());
    for f in 0..s[0] {
        let frame = Tensor::from_vec(&s[1..], frames.data()[f * plane..(f + 1) * plane].to_vec())?;
        let mask = sample_mask_with_patch(s[2], s[3], patch, ratio, rng.random())?;
        data.extend_from_slice(apply_mask(&frame, &mask)?.data());
    }
    Tensor::from_vec(&s, data)
}

/// `N×3×H×W` last frames of each sample, unmasked.
pub fn last_frames(samples: &[&Sample]) -> Result<Tensor<f32>, TrainError> {
    let first = samples.first().ok_or_else(|| TrainError::Config("empty batch".into()))?;
    let shape = first.frames.last().ok_or_else(|| TrainError::Config("sample without frames".into()))?.shape().to_vec();
    let mut data = Vec::new();
    for s in samples {
        data.extend_from_slice(s.frames.last().expect("validated").data());
    }
    Ok(Tensor::from_vec(&[samples.len(), shape[0], shape[1], shape[2]], data)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub mask_ratio: f64,
    pub patch: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { mask_ratio: 0.5, patch: PATCH, batch_size: 8, seed: 0 }
    }
}

/// One reconstruction step on `samples`; returns the batch loss.
pub fn pretrain_step(
    model: &mut Checkpoint<f32>,
    samples: &[&Sample],
    opt: &mut Optimizer<f32>,
    cfg: &PretrainConfig,
    mask_seed: u64,
) -> Result<f64, TrainError> {
    let frames = stack_frames(samples)?;
    let masked = mask_batch(&frames, cfg.mask_ratio, cfg.patch, mask_seed)?;
    let target = last_frames(samples)?;
    let tape = Tape::new();
    let bound = model.params.bind(&tape, true);
    let out = model_forward(&bound, &model.spec, tape.constant(masked))?;
    let loss = reconstruction_loss(out, tape.constant(target))?;
    let value = loss.item().expect("scalar loss").as_f64();
    tape.backward(loss)?;
    opt.step_store(&mut model.params, &bound.grads(&tape))?;
    Ok(value)
}

/// One pass over `data` in a seeded shuffled order with fresh masks per batch.
pub fn pretrain_epoch(
    model: &mut Checkpoint<f32>,
    data: &[Sample],
    opt: &mut Optimizer<f32>,
    cfg: &PretrainConfig,
    epoch: usize,
) -> Result<EpochStats, TrainError> {
    if model.phase != Phase::Pretrain {
        return Err(ModelError::PhaseMismatch { expected: Phase::Pretrain, found: model.phase }.into());
    }
    let mut total = 0.0;
    let batches = batch_order(data.len(), cfg.batch_size, cfg.seed, epoch);
    for (b, idx) in batches.iter().enumerate() {
        let samples: Vec<&Sample> = idx.iter().map(|&i| &data[i]).collect();
        let loss = pretrain_step(model, &samples, opt, cfg, mix_seed(cfg.seed, &[epoch as u64, b as u64, 0x6d61736b]))
            .map_err(|e| e.at(epoch, b))?;
        total += loss;
    }
    model.epoch = epoch as u64;
    Ok(EpochStats { epoch, mean_loss: total / batches.len().max(1) as f64, batches: batches.len(), lr: opt.lr() })
}

/// Reconstruction loss of `data` without updates, masks seeded by `seed`.
pub fn pretrain_eval(model: &Checkpoint<f32>, data: &[Sample], cfg: &PretrainConfig, seed: u64) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, chunk) in data.chunks(cfg.batch_size.max(1)).enumerate() {
        let samples: Vec<&Sample> = chunk.iter().collect();
        let frames = stack_frames(&samples)?;
        let masked = mask_batch(&frames, cfg.mask_ratio, cfg.patch, mix_seed(seed, &[b as u64]))?;
        let tape = Tape::new();
        let bound = model.params.bind(&tape, false);
        let out = model_forward(&bound, &model.spec, tape.constant(masked))?;
        let loss = reconstruction_loss(out, tape.constant(last_frames(&samples)?))?;
        total += loss.item().expect("scalar").as_f64() * samples.len() as f64;
        count += samples.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Masked input, reconstruction, and original of the last frame of `sample`.
pub fn reconstruct(model: &Checkpoint<f32>, sample: &Sample, ratio: f64, seed: u64) -> Result<[Tensor<f32>; 3], TrainError> {
    let frames = stack_frames(&[sample])?;
    let masked = mask_batch(&frames, ratio, PATCH, seed)?;
    let tape = Tape::new();
    let bound = model.params.bind(&tape, false);
    let out = model_forward(&bound, &model.spec, tape.constant(masked.clone()))?.value();
    let s = masked.shape().to_vec();
    let plane = s[1..].iter().product::<usize>();
    let last = s[0] - 1;
    let masked_last = Tensor::from_vec(&s[1..], masked.data()[last * plane..].to_vec())?;
    let recon = Tensor::from_vec(&s[1..], out.data().to_vec())?.map(|v| v.clamp(0.0, 1.0));
    Ok([masked_last, recon, sample.frames.last().expect("validated").clone()])
}
