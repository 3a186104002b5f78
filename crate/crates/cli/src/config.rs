//! Run configuration: one key table drives defaults, flags, config files, and manifests.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use laneforge::data::ScenePreset;
use laneforge::model::Variant;
use laneforge::objectives::{LossConfig, LossKind, PROB_CLAMP};
use laneforge::optim::{OptimConfig, OptimKind};
use laneforge::pretrain::PretrainConfig;

use crate::CliError;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    /// Boolean switch taking no value on the command line.
    pub switch: bool,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help, switch: false }
}

pub const ALL_SCENES: &str = "synthetic:normal,curve,occlude,shadow,bright,blur,dirty";

pub const KEYS: &[Key] = &[
    key("command", "", "subcommand; set from the command line or a manifest"),
    key("variant", "UNet_ConvLSTM", "UNet_ConvLSTM, SCNN_UNet_ConvLSTM or SCNN_UNet_Attention"),
    key("preset", "desk", "resolution preset: desk (64x128, base 8) or full (128x256, base 64)"),
    key("train_data", "synthetic:normal", "training source: synthetic:<scene>[,<scene>...] or index:<path>"),
    key("val_data", "synthetic:normal", "per-epoch validation source"),
    key("test_data", ALL_SCENES, "evaluation source, reported per scene"),
    key("train_size", "200", "synthetic training sequences per scene"),
    key("test_size", "50", "synthetic validation/test sequences per scene"),
    key("data_seed", "0", "seed of the synthetic sets"),
    key("epochs", "30", "training epochs (pretraining epochs for ablate-mask)"),
    key("finetune_epochs", "10", "fine-tuning epochs inside ablate-mask and grid-search"),
    key("batch", "8", "batch size"),
    key("optimizer", "radam", "sgd, adam or radam"),
    key("lr", "0.001", "initial learning rate"),
    key("lr_decay", "0.95", "per-epoch learning-rate decay factor"),
    key("loss", "pl", "fine-tuning loss: ce (weighted cross entropy) or pl (PolyLoss)"),
    key("alpha", "1", "PolyLoss log-term weight"),
    key("gamma", "1", "PolyLoss polynomial-term weight"),
    key("epsilon", "1", "PolyLoss focusing exponent"),
    key("omega1", "auto", "lane class weight; auto derives it from the training labels"),
    key("omega0", "auto", "background class weight; auto derives it from the training labels"),
    key("mask_ratio", "0.5", "fraction of patches masked during pretraining"),
    key("patch_size", "16", "mask patch edge in pixels"),
    key("augment_prob", "0", "probability of one geometric augmentation per training sample"),
    key("seed", "0", "initialization, shuffling and masking seed"),
    key("out", "runs/default", "output directory; every artifact is written below it"),
    key("pretrained", "", "pretraining checkpoint to fine-tune from"),
    Key { name: "from_scratch", default: "false", help: "fine-tune from a fresh initialization", switch: true },
    key("checkpoint", "", "checkpoint for eval and demo-reconstruct"),
    key("overlays", "0", "overlay images written per scene by eval"),
    key("demo_count", "4", "triptychs written by demo-reconstruct"),
];

pub fn find_key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Pretrain,
    Finetune,
    Eval,
    AblateMask,
    Count,
    DemoReconstruct,
    GridSearch,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Pretrain,
        Command::Finetune,
        Command::Eval,
        Command::AblateMask,
        Command::Count,
        Command::DemoReconstruct,
        Command::GridSearch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Eval => "eval",
            Command::AblateMask => "ablate-mask",
            Command::Count => "count",
            Command::DemoReconstruct => "demo-reconstruct",
            Command::GridSearch => "grid-search",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Command::Pretrain => "masked sequential autoencoder pretraining",
            Command::Finetune => "lane segmentation training, from scratch or from a pretraining checkpoint",
            Command::Eval => "per-scene pixel metrics and optional overlays",
            Command::AblateMask => "pretrain and fine-tune at mask ratios 0.25, 0.5 and 0.75",
            Command::Count => "parameter and MAC counts of every variant",
            Command::DemoReconstruct => "masked / reconstructed / original triptychs",
            Command::GridSearch => "PolyLoss hyperparameter grid",
        }
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown subcommand {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(Vec<ScenePreset>),
    Index(PathBuf),
}

impl FromStr for DataSource {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        if let Some(list) = s.strip_prefix("synthetic:") {
            let scenes = list
                .split(',')
                .map(|p| p.trim().parse::<ScenePreset>().map_err(|e| CliError::Config(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(DataSource::Synthetic(scenes))
        } else if let Some(path) = s.strip_prefix("index:") {
            Ok(DataSource::Index(PathBuf::from(path)))
        } else {
            Err(CliError::Config(format!("data source {s:?} must start with synthetic: or index:")))
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synthetic(s) => {
                let names: Vec<&str> = s.iter().map(|p| p.name()).collect();
                write!(f, "synthetic:{}", names.join(","))
            }
            DataSource::Index(p) => write!(f, "index:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub variant: Variant,
    pub preset: Preset,
    pub train_data: DataSource,
    pub val_data: DataSource,
    pub test_data: DataSource,
    pub train_size: usize,
    pub test_size: usize,
    pub data_seed: u64,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub batch: usize,
    pub optimizer: OptimConfig,
    pub loss: LossKind,
    pub loss_cfg: LossConfig,
    /// Class weights given explicitly; `None` derives them from the training labels.
    pub omega: (Option<f64>, Option<f64>),
    pub mask_ratio: f64,
    pub patch_size: usize,
    pub augment_prob: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub pretrained: Option<PathBuf>,
    pub from_scratch: bool,
    pub checkpoint: Option<PathBuf>,
    pub overlays: usize,
    pub demo_count: usize,
    /// Resolved `key = value` pairs in table order.
    raw: Vec<(&'static str, String)>,
}

fn parse<T: FromStr>(map: &BTreeMap<String, String>, name: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    let v = &map[name];
    v.parse().map_err(|e| CliError::Config(format!("{name} = {v:?}: {e}")))
}

fn parse_omega(map: &BTreeMap<String, String>, name: &str) -> Result<Option<f64>, CliError> {
    if map[name] == "auto" {
        Ok(None)
    } else {
        parse(map, name).map(Some)
    }
}

fn optional_path(map: &BTreeMap<String, String>, name: &str) -> Option<PathBuf> {
    let v = map[name].trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str, origin: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{}:{}: expected key = value", origin.display(), i + 1)))?;
        let k = k.trim();
        if find_key(k).is_none() {
            return Err(CliError::Config(format!("{}:{}: unknown key {k:?}", origin.display(), i + 1)));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

impl RunConfig {
    /// Table defaults overlaid by `overrides`.
    pub fn resolve(overrides: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let mut map: BTreeMap<String, String> = KEYS.iter().map(|k| (k.name.to_string(), k.default.to_string())).collect();
        for (k, v) in overrides {
            if find_key(k).is_none() {
                return Err(CliError::Config(format!("unknown key {k:?}")));
            }
            map.insert(k.clone(), v.clone());
        }
        if map["command"].is_empty() {
            return Err(CliError::Config("no subcommand given".into()));
        }
        let preset = match map["preset"].as_str() {
            "desk" => Preset::Desk,
            "full" => Preset::Full,
            other => return Err(CliError::Config(format!("preset {other:?} must be desk or full"))),
        };
        let optimizer = OptimConfig {
            kind: parse::<OptimKind>(&map, "optimizer")?,
            lr: parse(&map, "lr")?,
            decay: parse(&map, "lr_decay")?,
            ..OptimConfig::default()
        };
        optimizer.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let omega = (parse_omega(&map, "omega1")?, parse_omega(&map, "omega0")?);
        let loss_cfg = LossConfig {
            alpha: parse(&map, "alpha")?,
            gamma: parse(&map, "gamma")?,
            epsilon: parse(&map, "epsilon")?,
            omega1: omega.0.unwrap_or(1.0),
            omega0: omega.1.unwrap_or(1.0),
            prob_clamp: PROB_CLAMP,
        };
        loss_cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let cfg = RunConfig {
            command: map["command"].parse()?,
            variant: parse(&map, "variant")?,
            preset,
            train_data: map["train_data"].parse()?,
            val_data: map["val_data"].parse()?,
            test_data: map["test_data"].parse()?,
            train_size: parse(&map, "train_size")?,
            test_size: parse(&map, "test_size")?,
            data_seed: parse(&map, "data_seed")?,
            epochs: parse(&map, "epochs")?,
            finetune_epochs: parse(&map, "finetune_epochs")?,
            batch: parse(&map, "batch")?,
            optimizer,
            loss: parse(&map, "loss")?,
            loss_cfg,
            omega,
            mask_ratio: parse(&map, "mask_ratio")?,
            patch_size: parse(&map, "patch_size")?,
            augment_prob: parse(&map, "augment_prob")?,
            seed: parse(&map, "seed")?,
            out: PathBuf::from(&map["out"]),
            pretrained: optional_path(&map, "pretrained"),
            from_scratch: parse(&map, "from_scratch")?,
            checkpoint: optional_path(&map, "checkpoint"),
            overlays: parse(&map, "overlays")?,
            demo_count: parse(&map, "demo_count")?,
            raw: KEYS.iter().map(|k| (k.name, map[k.name].clone())).collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.batch == 0 {
            return bad("batch must be ≥ 1".into());
        }
        if self.train_size == 0 || self.test_size == 0 {
            return bad("train_size and test_size must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio {} outside [0, 1]", self.mask_ratio));
        }
        if self.patch_size == 0 {
            return bad("patch_size must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.augment_prob) {
            return bad(format!("augment_prob {} outside [0, 1]", self.augment_prob));
        }
        if self.from_scratch && self.pretrained.is_some() {
            return bad("from_scratch and pretrained are mutually exclusive".into());
        }
        Ok(())
    }

    /// `key = value` text that [`parse_kv`] reads back into the same configuration.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.raw {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Resolved value of `key` as written to the manifest.
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.raw.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_str())
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig { mask_ratio: self.mask_ratio, patch: self.patch_size, batch_size: self.batch, seed: self.seed }
    }
}
