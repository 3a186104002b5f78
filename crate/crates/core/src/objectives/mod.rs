//! Segmentation losses: weighted cross entropy, the customized PolyLoss, and
//! focal loss, plus the Taylor-series utilities that relate them.
//!
//! All losses take the lane-class probability map `h` (channel 1 of the
//! two-channel softmax) and a binary label map `y` of the same shape, clamp
//! `h` into `[1e-7, 1 − 1e-7]`, and average over every pixel `T` in the batch.
//!
//! ```
//! use laneforge::autograd::Tape;
//! use laneforge::objectives::{poly_loss, LossConfig};
//! use laneforge::tensor::Tensor;
//!
//! let tape = Tape::<f64>::new();
//! let h = tape.constant(Tensor::from_f64(&[1], &[0.5]).unwrap());
//! let y = tape.constant(Tensor::from_f64(&[1], &[1.0]).unwrap());
//! let cfg = LossConfig { alpha: 1.0, gamma: 1.0, epsilon: 0.0, ..LossConfig::default() };
//! let loss = poly_loss(h, y, &cfg).unwrap().item().unwrap();
//! assert!((loss - (2f64.ln() + 0.5)).abs() < 1e-12);
//! ```

mod taylor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::Var;
use crate::tensor::{Element, TensorError};

pub use taylor::{fl_taylor_truncated, poly1_closed_form, taylor_remainder_bound};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
    #[error("probabilities {probs:?} and labels {labels:?} differ in shape")]
    ShapeMismatch { probs: Vec<usize>, labels: Vec<usize> },
    #[error("Q = {0} is outside (0, 1)")]
    OutOfRange(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = LossError> = std::result::Result<T, E>;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub omega1: f64,
    pub omega0: f64,
    pub prob_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 1.0, gamma: 1.0, epsilon: 1.0, omega1: 1.0, omega0: 1.0, prob_clamp: PROB_CLAMP }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("alpha", self.alpha), ("gamma", self.gamma), ("epsilon", self.epsilon)];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(LossError::InvalidConfig(format!("{name} must be finite and ≥ 0, got {v}")));
        }
        let positive = [("omega1", self.omega1), ("omega0", self.omega0)];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(LossError::InvalidConfig(format!("{name} must be finite and > 0, got {v}")));
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return Err(LossError::InvalidConfig(format!("prob_clamp must lie in (0, 0.5), got {}", self.prob_clamp)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "ce")]
    WeightedCe,
    #[serde(rename = "pl")]
    Poly,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ce" => Ok(LossKind::WeightedCe),
            "pl" => Ok(LossKind::Poly),
            _ => Err(format!("unknown loss {s:?} (expected ce or pl)")),
        }
    }
}

impl LossKind {
    pub fn tag(self) -> &'static str {
        match self {
            LossKind::WeightedCe => "ce",
            LossKind::Poly => "pl",
        }
    }

    pub fn evaluate<'t, E: Element>(self, probs: Var<'t, E>, labels: Var<'t, E>, cfg: &LossConfig) -> Result<Var<'t, E>> {
        match self {
            LossKind::WeightedCe => weighted_ce(probs, labels, cfg),
            LossKind::Poly => poly_loss(probs, labels, cfg),
        }
    }
}

/// Lane-class probability `N×1×H×W` from two-channel logits `N×2×H×W`.
pub fn lane_probability<'t, E: Element>(logits: Var<'t, E>) -> Result<Var<'t, E>> {
    let shape = logits.shape();
    if shape.len() != 4 || shape[1] != 2 {
        return Err(LossError::InvalidConfig(format!("expected N×2×H×W logits, got {shape:?}")));
    }
    Ok(logits.softmax(1)?.narrow(1, 1, 1)?)
}

struct Prepared<'t, E: Element> {
    h: Var<'t, E>,
    y: Var<'t, E>,
    not_y: Var<'t, E>,
}

fn prepare<'t, E: Element>(probs: Var<'t, E>, labels: Var<'t, E>, clamp: f64) -> Result<Prepared<'t, E>> {
    let (ps, ls) = (probs.shape(), labels.shape());
    if ps != ls {
        return Err(LossError::ShapeMismatch { probs: ps, labels: ls });
    }
    Ok(Prepared { h: probs.clamp(clamp, 1.0 - clamp)?, y: labels, not_y: labels.one_minus()? })
}

/// `−(1/T) Σ [ω₁ y ln h + ω₀ (1−y) ln(1−h)]`
pub fn weighted_ce<'t, E: Element>(probs: Var<'t, E>, labels: Var<'t, E>, cfg: &LossConfig) -> Result<Var<'t, E>> {
    cfg.validate()?;
    let p = prepare(probs, labels, cfg.prob_clamp)?;
    let pos = p.y.mul(p.h.log()?)?.mul_scalar(cfg.omega1)?;
    let neg = p.not_y.mul(p.h.one_minus()?.log()?)?.mul_scalar(cfg.omega0)?;
    Ok(pos.add(neg)?.mean()?.neg()?)
}

/// `−(1/T) Σ ( α[y(1−h)^ε ln h + (1−y) h^ε ln(1−h)] − γ[y(1−h)^{ε+1} + (1−y) h^{ε+1}] )`
pub fn poly_loss<'t, E: Element>(probs: Var<'t, E>, labels: Var<'t, E>, cfg: &LossConfig) -> Result<Var<'t, E>> {
    cfg.validate()?;
    let p = prepare(probs, labels, cfg.prob_clamp)?;
    let one_minus_h = p.h.one_minus()?;
    let eps = cfg.epsilon;
    let log_terms = p
        .y
        .mul(one_minus_h.pow(eps)?.mul(p.h.log()?)?)?
        .add(p.not_y.mul(p.h.pow(eps)?.mul(one_minus_h.log()?)?)?)?;
    let poly_terms = p.y.mul(one_minus_h.pow(eps + 1.0)?)?.add(p.not_y.mul(p.h.pow(eps + 1.0)?)?)?;
    let inner = log_terms.mul_scalar(cfg.alpha)?.sub(poly_terms.mul_scalar(cfg.gamma)?)?;
    Ok(inner.mean()?.neg()?)
}

/// `−(1/T) Σ α (1−Q)^ε ln Q` with `Q = y h + (1−y)(1−h)`.
pub fn focal_loss<'t, E: Element>(probs: Var<'t, E>, labels: Var<'t, E>, alpha: f64, epsilon: f64) -> Result<Var<'t, E>> {
    if !(alpha >= 0.0 && epsilon >= 0.0) {
        return Err(LossError::InvalidConfig(format!("alpha {alpha} and epsilon {epsilon} must be ≥ 0")));
    }
    let p = prepare(probs, labels, PROB_CLAMP)?;
    let q = p.y.mul(p.h)?.add(p.not_y.mul(p.h.one_minus()?)?)?;
    let term = q.one_minus()?.pow(epsilon)?.mul(q.log()?)?;
    Ok(term.mean()?.mul_scalar(-alpha)?)
}

/// Inverse-frequency class weights `(ω₁, ω₀)`, scaled so the mean weight over all pixels is 1.
pub fn class_weights(lane_pixels: u64, total_pixels: u64) -> Result<(f64, f64)> {
    if lane_pixels == 0 || lane_pixels >= total_pixels {
        return Err(LossError::InvalidConfig(format!(
            "class weights need both classes present ({lane_pixels} lane of {total_pixels})"
        )));
    }
    let p = lane_pixels as f64 / total_pixels as f64;
    Ok((0.5 / p, 0.5 / (1.0 - p)))
}

/// PolyLoss hyperparameter grid: α ∈ {1, 2} × γ ∈ {0.5, 1, 2} × ε ∈ {0, 1, 2}.
pub fn default_grid() -> Vec<LossConfig> {
    let mut grid = Vec::with_capacity(18);
    for alpha in [1.0, 2.0] {
        for gamma in [0.5, 1.0, 2.0] {
            for epsilon in [0.0, 1.0, 2.0] {
                grid.push(LossConfig { alpha, gamma, epsilon, ..LossConfig::default() });
            }
        }
    }
    grid
}
