//! Dataset sources and parallel evaluation.

use laneforge::data::{load_index, synthetic_sample, Sample, SEQ};
use laneforge::eval::ConfusionCounts;
use laneforge::model::Checkpoint;
use laneforge::train::{mix_seed, predict};
use rayon::prelude::*;

use crate::config::DataSource;
use crate::CliError;

/// Which synthetic set a source feeds; keeps train, validation and test disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    fn tag(self) -> u64 {
        match self {
            Role::Train => 1,
            Role::Val => 2,
            Role::Test => 3,
        }
    }
}

/// Samples of one scene.
pub struct Split {
    pub scene: String,
    pub samples: Vec<Sample>,
}

/// Loads `src` at `height×width`, `per_scene` sequences per synthetic scene.
pub fn load(src: &DataSource, per_scene: usize, height: usize, width: usize, data_seed: u64, role: Role) -> Result<Vec<Split>, CliError> {
    match src {
        DataSource::Synthetic(scenes) => {
            let seed = mix_seed(data_seed, &[role.tag()]);
            scenes
                .iter()
                .map(|&preset| {
                    let samples = (0..per_scene)
                        .into_par_iter()
                        .map(|i| synthetic_sample(preset, i, height, width, SEQ, seed))
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok(Split { scene: preset.name().to_string(), samples })
                })
                .collect()
        }
        DataSource::Index(path) => {
            let index = load_index(path)?;
            let samples = (0..index.records.len())
                .into_par_iter()
                .map(|i| index.load_sample(i))
                .collect::<Result<Vec<_>, _>>()?;
            for s in &samples {
                let (h, w) = s.validate()?;
                if (h, w) != (height, width) {
                    return Err(CliError::Data(format!("{}: frames are {h}×{w}, the model expects {height}×{width}", s.source)));
                }
                if s.label.is_none() {
                    return Err(CliError::Data(format!("{}: no label", s.source)));
                }
            }
            let scene = path.file_stem().map_or("index".into(), |s| s.to_string_lossy().into_owned());
            Ok(vec![Split { scene, samples }])
        }
    }
}

pub fn flatten(splits: Vec<Split>) -> Vec<Sample> {
    splits.into_iter().flat_map(|s| s.samples).collect()
}

/// Confusion counts of `data`, batches evaluated in parallel and summed in order.
pub fn evaluate(model: &Checkpoint<f32>, data: &[Sample], batch: usize) -> Result<ConfusionCounts, CliError> {
    let parts = data
        .par_chunks(batch.max(1))
        .map(|chunk| -> Result<ConfusionCounts, CliError> {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let mut c = ConfusionCounts::default();
            for (pred, s) in predict(model, &refs)?.iter().zip(chunk) {
                let truth = s.label.as_ref().ok_or_else(|| CliError::Data(format!("{}: no label", s.source)))?;
                c += laneforge::eval::confusion(pred, truth)?;
            }
            Ok(c)
        })
        .collect::<Vec<_>>();
    let mut total = ConfusionCounts::default();
    for p in parts {
        total += p?;
    }
    Ok(total)
}
