//! Subcommand implementations. Every artifact goes below the run's `out` directory.

use std::path::Path;

use laneforge::data::{write_image, BinaryMap, Sample};
use laneforge::eval::{
    count_params_macs, lane_instances, metrics, render_overlay, write_csv, write_json, ConfusionCounts, DbscanParams,
    Overlay, ReportRow,
};
use laneforge::model::{transfer_weights, Checkpoint, ModelSpec, Phase, ScnnMixing, ScnnPlacement, Variant};
use laneforge::objectives::{default_grid, LossConfig, LossKind};
use laneforge::optim::Optimizer;
use laneforge::pretrain::{pretrain_epoch, pretrain_eval, reconstruct, PretrainConfig};
use laneforge::tensor::Tensor;
use laneforge::train::{dataset_class_weights, finetune_epoch, mix_seed, predict, FinetuneConfig};
use serde::Serialize;

use crate::config::{Command, Preset, RunConfig};
use crate::data::{evaluate, flatten, load, Role, Split};
use crate::CliError;

pub const MASK_RATIOS: [f64; 3] = [0.25, 0.5, 0.75];

/// Published `(params M, MACs G)` of the full-size segmentation models.
pub const REFERENCE_COMPLEXITY: [(Variant, f64, f64); 3] = [
    (Variant::UnetConvLstm, 51.1, 69.0),
    (Variant::ScnnUnetConvLstm, 51.3, 93.0),
    (Variant::ScnnUnetAttention, 13.7, 68.9),
];

const VAL_MASK_SEED: u64 = 0x7661_6c6d;
const HEAD_SEED: u64 = 0x6865_6164;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("manifest.txt"), cfg.manifest())?;
    match cfg.command {
        Command::Pretrain => pretrain(cfg),
        Command::Finetune => finetune(cfg),
        Command::Eval => eval(cfg),
        Command::AblateMask => ablate_mask(cfg),
        Command::Count => count(cfg),
        Command::DemoReconstruct => demo_reconstruct(cfg),
        Command::GridSearch => grid_search(cfg),
    }
}

pub fn model_spec(preset: Preset, variant: Variant, phase: Phase) -> ModelSpec {
    match preset {
        Preset::Desk => ModelSpec::desk(variant, phase.head_channels()),
        Preset::Full => ModelSpec::full(variant, phase.head_channels()),
    }
}

fn load_checkpoint(path: &Path, phase: Phase) -> Result<Checkpoint<f32>, CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("missing checkpoint {}", path.display())));
    }
    let ck = Checkpoint::<f32>::load(path)?;
    if ck.phase != phase {
        return Err(CliError::Config(format!("{} is a {:?} checkpoint, expected {phase:?}", path.display(), ck.phase)));
    }
    Ok(ck)
}

fn check_spec(cfg: &RunConfig, ck: &Checkpoint<f32>, path: &Path) -> Result<(), CliError> {
    let want = model_spec(cfg.preset, cfg.variant, ck.phase);
    if ck.spec != want {
        return Err(CliError::Config(format!(
            "{} holds {} at {}×{}, the run asks for {} at {}×{}",
            path.display(),
            ck.spec.variant,
            ck.spec.input_height,
            ck.spec.input_width,
            want.variant,
            want.input_height,
            want.input_width
        )));
    }
    Ok(())
}

struct Datasets {
    train: Vec<Sample>,
    val: Vec<Sample>,
}

fn datasets(cfg: &RunConfig, spec: &ModelSpec) -> Result<Datasets, CliError> {
    let (h, w) = (spec.input_height, spec.input_width);
    let train = flatten(load(&cfg.train_data, cfg.train_size, h, w, cfg.data_seed, Role::Train)?);
    let val = flatten(load(&cfg.val_data, cfg.test_size, h, w, cfg.data_seed, Role::Val)?);
    Ok(Datasets { train, val })
}

fn test_splits(cfg: &RunConfig, spec: &ModelSpec) -> Result<Vec<Split>, CliError> {
    load(&cfg.test_data, cfg.test_size, spec.input_height, spec.input_width, cfg.data_seed, Role::Test)
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

fn run_pretrain(
    cfg: &RunConfig,
    spec: &ModelSpec,
    pcfg: &PretrainConfig,
    data: &Datasets,
    epochs: usize,
) -> Result<(Checkpoint<f32>, Vec<PretrainRow>), CliError> {
    let mut model = Checkpoint::<f32>::init(spec, Phase::Pretrain, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer).map_err(|e| CliError::Config(e.to_string()))?;
    let mut rows = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let st = pretrain_epoch(&mut model, &data.train, &mut opt, pcfg, epoch)?;
        opt.decay_to_epoch(epoch).map_err(|e| CliError::Config(e.to_string()))?;
        let val_loss = pretrain_eval(&model, &data.val, pcfg, mix_seed(cfg.seed, &[VAL_MASK_SEED]))?;
        eprintln!("pretrain ratio {} epoch {epoch}: train {:.6} val {val_loss:.6}", pcfg.mask_ratio, st.mean_loss);
        rows.push(PretrainRow { epoch, lr: st.lr, train_loss: st.mean_loss, val_loss });
    }
    Ok((model, rows))
}

fn pretrain(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = model_spec(cfg.preset, cfg.variant, Phase::Pretrain);
    let data = datasets(cfg, &spec)?;
    let (model, rows) = run_pretrain(cfg, &spec, &cfg.pretrain_config(), &data, cfg.epochs)?;
    model.save(cfg.out.join("pretrain.lfck"))?;
    write_csv(cfg.out.join("pretrain_loss.csv"), &rows)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, Serialize)]
struct FinetuneSummary {
    init: String,
    loss: &'static str,
    loss_config: LossConfig,
    epochs: usize,
    final_epoch: Option<CurveRow>,
}

fn initial_model(cfg: &RunConfig, spec: &ModelSpec) -> Result<(Checkpoint<f32>, String), CliError> {
    match &cfg.pretrained {
        Some(path) => {
            let pre = load_checkpoint(path, Phase::Pretrain)?;
            check_spec(cfg, &pre, path)?;
            Ok((transfer_weights(&pre, spec, mix_seed(cfg.seed, &[HEAD_SEED]))?, path.display().to_string()))
        }
        None => Ok((Checkpoint::init(spec, Phase::Finetune, cfg.seed)?, "scratch".into())),
    }
}

fn resolved_loss(cfg: &RunConfig, train: &[Sample], base: LossConfig) -> Result<LossConfig, CliError> {
    let (w1, w0) = match cfg.omega {
        (Some(a), Some(b)) => (a, b),
        (o1, o0) => {
            let (a, b) = dataset_class_weights(train)?;
            (o1.unwrap_or(a), o0.unwrap_or(b))
        }
    };
    Ok(LossConfig { omega1: w1, omega0: w0, ..base })
}

fn run_finetune(
    cfg: &RunConfig,
    mut model: Checkpoint<f32>,
    data: &Datasets,
    ft: &FinetuneConfig,
    epochs: usize,
    label: &str,
) -> Result<(Checkpoint<f32>, Vec<CurveRow>), CliError> {
    let mut opt = Optimizer::new(cfg.optimizer).map_err(|e| CliError::Config(e.to_string()))?;
    let mut rows = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let st = finetune_epoch(&mut model, &data.train, &mut opt, ft, epoch)?;
        opt.decay_to_epoch(epoch).map_err(|e| CliError::Config(e.to_string()))?;
        let m = metrics(&evaluate(&model, &data.val, cfg.batch)?)?;
        eprintln!("{label} epoch {epoch}: loss {:.5} val f1 {:.4} precision {:.4}", st.mean_loss, m.f1, m.precision);
        rows.push(CurveRow {
            epoch,
            lr: st.lr,
            train_loss: st.mean_loss,
            val_accuracy: m.accuracy,
            val_precision: m.precision,
            val_recall: m.recall,
            val_f1: m.f1,
        });
    }
    Ok((model, rows))
}

fn finetune_config(cfg: &RunConfig, loss: LossKind, loss_cfg: LossConfig) -> FinetuneConfig {
    FinetuneConfig { loss, loss_cfg, batch_size: cfg.batch, seed: cfg.seed, augment_prob: cfg.augment_prob }
}

fn finetune(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = model_spec(cfg.preset, cfg.variant, Phase::Finetune);
    let (model, init) = initial_model(cfg, &spec)?;
    let data = datasets(cfg, &spec)?;
    let loss_cfg = resolved_loss(cfg, &data.train, cfg.loss_cfg)?;
    let ft = finetune_config(cfg, cfg.loss, loss_cfg);
    let (model, rows) = run_finetune(cfg, model, &data, &ft, cfg.epochs, cfg.loss.tag())?;
    model.save(cfg.out.join("finetune.lfck"))?;
    write_csv(cfg.out.join("curves.csv"), &rows)?;
    let summary = FinetuneSummary { init, loss: cfg.loss.tag(), loss_config: loss_cfg, epochs: cfg.epochs, final_epoch: rows.last().cloned() };
    write_json(cfg.out.join("finetune.json"), &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct Report<'a> {
    checkpoint: String,
    variant: Variant,
    rows: &'a [ReportRow],
}

const PRED_COLOR: [f32; 3] = [0.0, 1.0, 0.0];

fn write_overlays(dir: &Path, scene: &str, index: usize, sample: &Sample, pred: &BinaryMap) -> Result<(), CliError> {
    let frame = sample.frames.last().expect("validated sample");
    let instances = lane_instances(pred, DbscanParams::default());
    let outputs = [
        ("pred", render_overlay(frame, Overlay::Mask(pred, PRED_COLOR))?),
        ("instances", render_overlay(frame, Overlay::Instances(&instances))?),
        ("curves", render_overlay(frame, Overlay::Curves(&instances))?),
    ];
    for (kind, img) in outputs {
        write_image(dir.join(format!("{scene}_{index:03}_{kind}.ppm")), &img)?;
    }
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("finetune.lfck"));
    let model = load_checkpoint(&path, Phase::Finetune)?;
    check_spec(cfg, &model, &path)?;
    let splits = test_splits(cfg, &model.spec)?;
    let overlay_dir = cfg.out.join("overlays");
    if cfg.overlays > 0 {
        std::fs::create_dir_all(&overlay_dir)?;
    }
    let mut rows = Vec::with_capacity(splits.len() + 1);
    let mut overall = ConfusionCounts::default();
    let mut count = 0;
    for split in &splits {
        let c = evaluate(&model, &split.samples, cfg.batch)?;
        overall += c;
        count += split.samples.len();
        let row = ReportRow::new(split.scene.clone(), split.samples.len(), c)?;
        eprintln!("eval {}: f1 {:.4} precision {:.4} accuracy {:.4}", row.scene, row.f1, row.precision, row.accuracy);
        rows.push(row);
        let shown: Vec<&Sample> = split.samples.iter().take(cfg.overlays).collect();
        if !shown.is_empty() {
            for (i, (s, pred)) in shown.iter().zip(predict(&model, &shown)?).enumerate() {
                write_overlays(&overlay_dir, &split.scene, i, s, &pred)?;
            }
        }
    }
    rows.push(ReportRow::new("overall", count, overall)?);
    write_csv(cfg.out.join("report.csv"), &rows)?;
    write_json(cfg.out.join("report.json"), &Report { checkpoint: path.display().to_string(), variant: model.spec.variant, rows: &rows })?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub mask_ratio: f64,
    pub recon_loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationCurveRow {
    pub mask_ratio: f64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

fn ablate_mask(cfg: &RunConfig) -> Result<(), CliError> {
    let pre_spec = model_spec(cfg.preset, cfg.variant, Phase::Pretrain);
    let spec = model_spec(cfg.preset, cfg.variant, Phase::Finetune);
    let data = datasets(cfg, &spec)?;
    let test = flatten(test_splits(cfg, &spec)?);
    let loss_cfg = resolved_loss(cfg, &data.train, cfg.loss_cfg)?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for ratio in MASK_RATIOS {
        let pcfg = PretrainConfig { mask_ratio: ratio, ..cfg.pretrain_config() };
        let (pre, pre_rows) = run_pretrain(cfg, &pre_spec, &pcfg, &data, cfg.epochs)?;
        curves.extend(pre_rows.iter().map(|r| AblationCurveRow { mask_ratio: ratio, epoch: r.epoch, train_loss: r.train_loss, val_loss: r.val_loss }));
        let recon_loss = pre_rows.last().map_or(f64::NAN, |r| r.val_loss);
        let model = transfer_weights(&pre, &spec, mix_seed(cfg.seed, &[HEAD_SEED]))?;
        let ft = finetune_config(cfg, cfg.loss, loss_cfg);
        let (model, _) = run_finetune(cfg, model, &data, &ft, cfg.finetune_epochs, &format!("ratio {ratio}"))?;
        let m = metrics(&evaluate(&model, &test, cfg.batch)?)?;
        rows.push(AblationRow { mask_ratio: ratio, recon_loss, accuracy: m.accuracy, precision: m.precision, recall: m.recall, f1: m.f1 });
    }
    write_csv(cfg.out.join("ablate_mask.csv"), &rows)?;
    write_csv(cfg.out.join("ablate_mask_curves.csv"), &curves)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CountRow {
    pub variant: Variant,
    /// `default`, or `scnn-first-block-full` for the alternative SCNN site and mixing.
    pub config: &'static str,
    pub preset: &'static str,
    pub params: u64,
    pub macs: u64,
    pub params_m: f64,
    pub macs_g: f64,
    pub reference_params_m: Option<f64>,
    pub reference_macs_g: Option<f64>,
    pub params_deviation: Option<f64>,
    pub macs_deviation: Option<f64>,
}

fn count_row(spec: &ModelSpec, config: &'static str, preset: Preset) -> CountRow {
    let c = count_params_macs(spec);
    let (params_m, macs_g) = (c.params as f64 / 1e6, c.macs as f64 / 1e9);
    let reference = (preset == Preset::Full)
        .then(|| REFERENCE_COMPLEXITY.iter().find(|r| r.0 == spec.variant).map(|r| (r.1, r.2)))
        .flatten();
    CountRow {
        variant: spec.variant,
        config,
        preset: if preset == Preset::Full { "full" } else { "desk" },
        params: c.params,
        macs: c.macs,
        params_m,
        macs_g,
        reference_params_m: reference.map(|r| r.0),
        reference_macs_g: reference.map(|r| r.1),
        params_deviation: reference.map(|r| params_m / r.0 - 1.0),
        macs_deviation: reference.map(|r| macs_g / r.1 - 1.0),
    }
}

/// Every variant at `preset`, plus the SCNN variants with first-block, full-mixing, length-9 slices.
pub fn count_rows(preset: Preset) -> Vec<CountRow> {
    let mut rows: Vec<CountRow> =
        Variant::ALL.iter().map(|&v| count_row(&model_spec(preset, v, Phase::Finetune), "default", preset)).collect();
    for v in Variant::ALL.into_iter().filter(|v| v.has_scnn()) {
        let spec = ModelSpec {
            scnn_placement: ScnnPlacement::FirstBlock,
            scnn_mixing: ScnnMixing::Full,
            scnn_kernel_len: 9,
            ..model_spec(preset, v, Phase::Finetune)
        };
        rows.push(count_row(&spec, "scnn-first-block-full", preset));
    }
    rows
}

fn count(cfg: &RunConfig) -> Result<(), CliError> {
    let rows = count_rows(cfg.preset);
    for r in &rows {
        println!("{:<20} {:<22} params {:>8.2} M  MACs {:>8.2} G", r.variant.name(), r.config, r.params_m, r.macs_g);
    }
    write_csv(cfg.out.join("count.csv"), &rows)?;
    Ok(())
}

/// `[masked | reconstruction | original]` side by side.
fn triptych(parts: &[Tensor<f32>; 3]) -> Result<Tensor<f32>, CliError> {
    let s = parts[0].shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = vec![0f32; c * h * 3 * w];
    for (k, p) in parts.iter().enumerate() {
        for ch in 0..c {
            for r in 0..h {
                let src = &p.data()[(ch * h + r) * w..][..w];
                out[(ch * h + r) * 3 * w + k * w..][..w].copy_from_slice(src);
            }
        }
    }
    Tensor::from_vec(&[c, h, 3 * w], out).map_err(|e| CliError::Failed(e.to_string()))
}

fn demo_reconstruct(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("pretrain.lfck"));
    let model = load_checkpoint(&path, Phase::Pretrain)?;
    check_spec(cfg, &model, &path)?;
    let samples = flatten(load(&cfg.val_data, cfg.demo_count, model.spec.input_height, model.spec.input_width, cfg.data_seed, Role::Val)?);
    let dir = cfg.out.join("reconstruct");
    std::fs::create_dir_all(&dir)?;
    for (i, s) in samples.iter().take(cfg.demo_count).enumerate() {
        let parts = reconstruct(&model, s, cfg.mask_ratio, mix_seed(cfg.seed, &[i as u64]))?;
        let img = triptych(&parts)?.map(|v| v.clamp(0.0, 1.0));
        write_image(dir.join(format!("{i:03}.ppm")), &img)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub val_accuracy: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

fn grid_search(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = model_spec(cfg.preset, cfg.variant, Phase::Finetune);
    let data = datasets(cfg, &spec)?;
    let (start, _) = initial_model(cfg, &spec)?;
    let mut rows = Vec::new();
    for point in default_grid() {
        let loss_cfg = resolved_loss(cfg, &data.train, point)?;
        let ft = finetune_config(cfg, LossKind::Poly, loss_cfg);
        let label = format!("grid α={} γ={} ε={}", point.alpha, point.gamma, point.epsilon);
        let (_, curve) = run_finetune(cfg, start.clone(), &data, &ft, cfg.finetune_epochs, &label)?;
        let last = curve.last().ok_or_else(|| CliError::Config("finetune_epochs must be ≥ 1".into()))?;
        rows.push(GridRow {
            alpha: point.alpha,
            gamma: point.gamma,
            epsilon: point.epsilon,
            val_accuracy: last.val_accuracy,
            val_precision: last.val_precision,
            val_recall: last.val_recall,
            val_f1: last.val_f1,
        });
    }
    write_csv(cfg.out.join("grid_search.csv"), &rows)?;
    let best = rows.iter().max_by(|a, b| a.val_f1.total_cmp(&b.val_f1)).expect("non-empty grid");
    std::fs::write(
        cfg.out.join("grid_best.txt"),
        format!("loss = pl\nalpha = {}\ngamma = {}\nepsilon = {}\n", best.alpha, best.gamma, best.epsilon),
    )?;
    Ok(())
}

