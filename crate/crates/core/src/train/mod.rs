//! Fine-tuning loop, prediction, evaluation, and the plumbing shared with pretraining.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::{augment, stack_frames, stack_labels, Augment, BinaryMap, DataError, Sample};
use crate::eval::{confusion, ConfusionCounts, EvalError};
use crate::model::{model_forward, Checkpoint, ModelError, Phase};
use crate::objectives::{class_weights, lane_probability, LossConfig, LossError, LossKind};
use crate::optim::{OptimError, Optimizer};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("epoch {epoch}, batch {batch}: {source}")]
    At {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<TrainError>,
    },
}

impl TrainError {
    pub fn at(self, epoch: usize, batch: usize) -> Self {
        Self::At { epoch, batch, source: Box::new(self) }
    }

    fn tensor(&self) -> Option<&TensorError> {
        match self {
            Self::Tensor(t) | Self::Model(ModelError::Tensor(t)) | Self::Loss(LossError::Tensor(t)) => Some(t),
            Self::At { source, .. } => source.tensor(),
            _ => None,
        }
    }

    /// A loss, activation, or gradient became non-finite.
    pub fn is_numeric(&self) -> bool {
        matches!(self.tensor(), Some(TensorError::NonFinite { .. }))
    }

    /// Missing, malformed, or unreadable input data.
    pub fn is_data(&self) -> bool {
        match self {
            Self::Data(_) => true,
            Self::At { source, .. } => source.is_data(),
            _ => false,
        }
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// SplitMix64 fold of `parts` into `seed`.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in std::iter::once(&0x5eed).chain(parts) {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Seeded shuffle of `0..n` cut into batches; the last batch may be short.
pub fn batch_order(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, &[epoch as u64, 0x6f72_6472])));
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneConfig {
    pub loss: LossKind,
    pub loss_cfg: LossConfig,
    pub batch_size: usize,
    pub seed: u64,
    /// Probability of one random geometric augmentation per training sample.
    pub augment_prob: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { loss: LossKind::Poly, loss_cfg: LossConfig::default(), batch_size: 8, seed: 0, augment_prob: 0.0 }
    }
}

/// `(ω₁, ω₀)` from the lane-pixel frequency of `data`.
pub fn dataset_class_weights(data: &[Sample]) -> Result<(f64, f64)> {
    let (mut lane, mut total) = (0u64, 0u64);
    for s in data {
        let l = s.label.as_ref().ok_or_else(|| TrainError::Config(format!("{} has no label", s.source)))?;
        lane += l.count_ones() as u64;
        total += l.data().len() as u64;
    }
    Ok(class_weights(lane, total)?)
}

fn check_finetune(model: &Checkpoint<f32>) -> Result<()> {
    if model.phase != Phase::Finetune {
        return Err(ModelError::PhaseMismatch { expected: Phase::Finetune, found: model.phase }.into());
    }
    Ok(())
}

/// One segmentation step; returns the batch loss.
pub fn finetune_step(model: &mut Checkpoint<f32>, samples: &[&Sample], opt: &mut Optimizer<f32>, cfg: &FinetuneConfig) -> Result<f64> {
    let frames = stack_frames(samples)?;
    let labels = stack_labels(samples)?;
    let ls = labels.shape().to_vec();
    let labels = labels.reshape(&[ls[0], 1, ls[1], ls[2]])?;
    let tape = Tape::new();
    let bound = model.params.bind(&tape, true);
    let logits = model_forward(&bound, &model.spec, tape.constant(frames))?;
    let loss = cfg.loss.evaluate(lane_probability(logits)?, tape.constant(labels), &cfg.loss_cfg)?;
    let value = f64::from(loss.item().expect("scalar loss"));
    tape.backward(loss)?;
    opt.step_store(&mut model.params, &bound.grads(&tape))?;
    Ok(value)
}

/// One pass over `data` in a seeded shuffled order.
pub fn finetune_epoch(
    model: &mut Checkpoint<f32>,
    data: &[Sample],
    opt: &mut Optimizer<f32>,
    cfg: &FinetuneConfig,
    epoch: usize,
) -> Result<EpochStats> {
    check_finetune(model)?;
    let batches = batch_order(data.len(), cfg.batch_size, cfg.seed, epoch);
    let mut total = 0.0;
    for (b, idx) in batches.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[epoch as u64, b as u64, 0x61_7567]));
        let augmented: Vec<Sample> = idx
            .iter()
            .map(|&i| {
                let s = &data[i];
                if cfg.augment_prob > 0.0 && rng.random_bool(cfg.augment_prob.min(1.0)) {
                    let (h, w) = (s.frames[0].shape()[1], s.frames[0].shape()[2]);
                    augment(s, Augment::random(&mut rng, h, w))
                } else {
                    s.clone()
                }
            })
            .collect();
        let refs: Vec<&Sample> = augmented.iter().collect();
        total += finetune_step(model, &refs, opt, cfg).map_err(|e| e.at(epoch, b))?;
    }
    model.epoch = epoch as u64;
    Ok(EpochStats { epoch, mean_loss: total / batches.len().max(1) as f64, batches: batches.len(), lr: opt.lr() })
}

/// Raw `N×2×H×W` logits for a batch.
pub fn logits(model: &Checkpoint<f32>, samples: &[&Sample]) -> Result<Tensor<f32>> {
    check_finetune(model)?;
    let tape = Tape::new();
    let bound = model.params.bind(&tape, false);
    Ok(model_forward(&bound, &model.spec, tape.constant(stack_frames(samples)?))?.value())
}

/// Channel argmax of the logits; ties go to background.
pub fn binarize(logits: &Tensor<f32>) -> Vec<BinaryMap> {
    let s = logits.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    let d = logits.data();
    (0..n)
        .map(|i| {
            let bg = &d[i * 2 * h * w..(i * 2 + 1) * h * w];
            let fg = &d[(i * 2 + 1) * h * w..(i * 2 + 2) * h * w];
            BinaryMap::from_vec(h, w, bg.iter().zip(fg).map(|(b, f)| u8::from(f > b)).collect()).expect("map size")
        })
        .collect()
}

pub fn predict(model: &Checkpoint<f32>, samples: &[&Sample]) -> Result<Vec<BinaryMap>> {
    Ok(binarize(&logits(model, samples)?))
}

/// Confusion counts of `data` in batches of `batch`.
pub fn evaluate(model: &Checkpoint<f32>, data: &[Sample], batch: usize) -> Result<ConfusionCounts> {
    let mut total = ConfusionCounts::default();
    for chunk in data.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        for (pred, s) in predict(model, &refs)?.iter().zip(chunk) {
            let truth = s.label.as_ref().ok_or_else(|| TrainError::Config(format!("{} has no label", s.source)))?;
            total += confusion(pred, truth)?;
        }
    }
    Ok(total)
}
