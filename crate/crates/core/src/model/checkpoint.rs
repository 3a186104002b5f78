//! Checkpoints: binary tensor file with a JSON trailer, plus head-swapping weight transfer.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LFCK" | u32 version = 1 | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | u8 dtype (0 = f32, 1 = f64) | raw elements
//! UTF-8 JSON trailer {spec, phase, seed, epoch, head_seed} | u64 trailer length
//! ```

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelSpec, ParamStore, Result};
use crate::tensor::{DType, Element, Tensor};

const MAGIC: &[u8; 4] = b"LFCK";
const VERSION: u32 = 1;

/// Parameters that are re-initialized rather than transferred.
pub const HEAD_PARAMS: [&str; 2] = ["head.weight", "head.bias"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn head_channels(self) -> usize {
        match self {
            Phase::Pretrain => 3,
            Phase::Finetune => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<E: Element> {
    pub spec: ModelSpec,
    pub params: ParamStore<E>,
    pub phase: Phase,
    pub seed: u64,
    pub epoch: u64,
    /// Seed of the freshly initialized head after a transfer.
    pub head_seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    spec: ModelSpec,
    phase: Phase,
    seed: u64,
    epoch: u64,
    head_seed: Option<u64>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ModelError::Format(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn read_elements<E: Element, T: Element>(raw: &[u8]) -> Vec<E> {
    let size = T::DTYPE.size();
    raw.chunks_exact(size).map(|c| E::from_f64_lossy(T::read_le(c).as_f64())).collect()
}

impl<E: Element> Checkpoint<E> {
    pub fn new(spec: ModelSpec, params: ParamStore<E>, phase: Phase, seed: u64) -> Result<Self> {
        if spec.head_channels != phase.head_channels() {
            return Err(ModelError::InvalidSpec(format!(
                "{phase:?} checkpoints need {} head channels, spec has {}",
                phase.head_channels(),
                spec.head_channels
            )));
        }
        params.check(&spec)?;
        Ok(Self { spec, params, phase, seed, epoch: 0, head_seed: None })
    }

    /// Freshly initialized checkpoint for `phase`.
    pub fn init(spec: &ModelSpec, phase: Phase, seed: u64) -> Result<Self> {
        let spec = spec.with_phase_head(phase.head_channels());
        let params = ParamStore::init(&spec, seed)?;
        Self::new(spec, params, phase, seed)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            let len = u16::try_from(name.len()).map_err(|_| ModelError::Format(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.push(E::DTYPE.code());
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        let trailer = Trailer {
            spec: self.spec.clone(),
            phase: self.phase,
            seed: self.seed,
            epoch: self.epoch,
            head_seed: self.head_seed,
        };
        let json = serde_json::to_vec(&trailer).map_err(|e| ModelError::Format(e.to_string()))?;
        out.extend_from_slice(&json);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 + 8 {
            return Err(ModelError::Format("file too short".into()));
        }
        let trailer_len = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes")) as usize;
        let body_end = bytes
            .len()
            .checked_sub(8 + trailer_len)
            .ok_or_else(|| ModelError::Format("trailer length exceeds file".into()))?;
        let trailer: Trailer = serde_json::from_slice(&bytes[body_end..bytes.len() - 8])
            .map_err(|e| ModelError::Format(format!("trailer: {e}")))?;

        let mut r = Reader { bytes: &bytes[..body_end], pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut params = IndexMap::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| ModelError::Format("name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let dtype = DType::from_code(r.u8()?).ok_or_else(|| ModelError::Format(format!("{name}: bad dtype")))?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * dtype.size())?;
            let data = match dtype {
                DType::F32 => read_elements::<E, f32>(raw),
                DType::F64 => read_elements::<E, f64>(raw),
            };
            let t = Tensor::from_vec(&shape, data).map_err(|e| ModelError::Format(format!("{name}: {e}")))?;
            if params.insert(name.clone(), t).is_some() {
                return Err(ModelError::Format(format!("duplicate parameter {name}")));
            }
        }
        if r.pos != body_end {
            return Err(ModelError::Format("trailing bytes before trailer".into()));
        }
        let mut ck = Self::new(trailer.spec, ParamStore::from_map(params), trailer.phase, trailer.seed)?;
        ck.epoch = trailer.epoch;
        ck.head_seed = trailer.head_seed;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Copies every non-head parameter of a pretraining checkpoint into a fine-tuning one.
///
/// The 2-channel head is initialized from `head_seed`, which is recorded.
pub fn transfer_weights<E: Element>(
    pretrained: &Checkpoint<E>,
    target_spec: &ModelSpec,
    head_seed: u64,
) -> Result<Checkpoint<E>> {
    if pretrained.phase != Phase::Pretrain {
        return Err(ModelError::PhaseMismatch { expected: Phase::Pretrain, found: pretrained.phase });
    }
    if pretrained.spec.variant != target_spec.variant {
        return Err(ModelError::VariantMismatch { expected: target_spec.variant, found: pretrained.spec.variant });
    }
    let target = target_spec.with_phase_head(Phase::Finetune.head_channels());
    if pretrained.spec.with_phase_head(target.head_channels) != target {
        return Err(ModelError::InvalidSpec("specs differ beyond the head".into()));
    }
    target.validate()?;
    let fresh = ParamStore::<E>::init_where(&target, head_seed, |n| HEAD_PARAMS.contains(&n));
    let mut params = ParamStore::default();
    for layer in super::layer_table(&target) {
        for (name, shape) in &layer.params {
            let t = if HEAD_PARAMS.contains(&name.as_str()) {
                fresh.get(name)
            } else {
                pretrained.params.get(name)
            }
            .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ParamShape { name: name.clone(), expected: shape.clone(), found: t.shape().to_vec() });
            }
            params.insert(name.clone(), t.clone());
        }
    }
    let mut ck = Checkpoint::new(target, params, Phase::Finetune, pretrained.seed)?;
    ck.epoch = pretrained.epoch;
    ck.head_seed = Some(head_seed);
    Ok(ck)
}
