//! SGD with momentum, Adam, RAdam, and exponential per-epoch learning-rate decay.
//!
//! Moments are kept per parameter in the parameter's element type; each update
//! is evaluated in `f64` and rounded once.
//!
//! ```
//! use laneforge::optim::{OptimConfig, OptimKind, Optimizer};
//! use laneforge::tensor::Tensor;
//!
//! let mut opt = Optimizer::<f64>::new(OptimConfig { kind: OptimKind::Sgd, lr: 0.1, ..OptimConfig::default() }).unwrap();
//! let mut p = vec![Tensor::scalar(0.0)];
//! opt.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
//! opt.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
//! assert!((p[0].data()[0] + 0.29).abs() < 1e-12);
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::ParamStore;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("parameter {index}: shape {param:?} vs gradient {grad:?}")]
    ShapeMismatch { index: usize, param: Vec<usize>, grad: Vec<usize> },
    #[error("{params} parameters but {grads} gradients")]
    CountMismatch { params: usize, grads: usize },
}

pub type Result<T> = std::result::Result<T, OptimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    Adam,
    Radam,
}

impl OptimKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
            Self::Radam => "radam",
        }
    }
}

impl fmt::Display for OptimKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for OptimKind {
    type Err = OptimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            "radam" => Ok(Self::Radam),
            other => Err(OptimError::InvalidConfig(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    /// Per-epoch multiplicative decay `d`.
    pub decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { kind: OptimKind::Radam, lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, momentum: 0.9, decay: 0.95 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(OptimError::InvalidConfig(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and nonnegative");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("eps must be positive and momentum in [0, 1)");
        }
        Ok(())
    }
}

/// `ρ_t` of the rectified schedule and, when `ρ_t > 4`, the rectification factor `r_t`.
pub fn radam_rectifier(t: u64, beta2: f64) -> (f64, Option<f64>) {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b2t = beta2.powf(t as f64);
    let rho_t = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
    if rho_t > 4.0 {
        let r = ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt();
        (rho_t, Some(r))
    } else {
        (rho_t, None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<E: Element> {
    cfg: OptimConfig,
    lr: f64,
    t: u64,
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
}

impl<E: Element> Optimizer<E> {
    pub fn new(cfg: OptimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, lr: cfg.lr, t: 0, m: Vec::new(), v: Vec::new() })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Sets `lr = lr0 · d^epoch`.
    pub fn decay_to_epoch(&mut self, epoch: usize) -> Result<f64> {
        self.lr = lr_decay(self.cfg.lr, self.cfg.decay, epoch)?;
        Ok(self.lr)
    }

    /// Updates `params` in place from `grads`, both in the same order.
    pub fn step(&mut self, params: &mut [Tensor<E>], grads: &[Tensor<E>]) -> Result<()> {
        self.step_iter(params.iter_mut(), grads)
    }

    /// As [`Optimizer::step`], over a parameter store in store order.
    pub fn step_store(&mut self, params: &mut ParamStore<E>, grads: &[Tensor<E>]) -> Result<()> {
        self.step_iter(params.iter_mut().map(|(_, t)| t), grads)
    }

    fn step_iter<'a>(&mut self, params: impl Iterator<Item = &'a mut Tensor<E>>, grads: &[Tensor<E>]) -> Result<()>
    where
        E: 'a,
    {
        let mut params: Vec<&mut Tensor<E>> = params.collect();
        if params.len() != grads.len() {
            return Err(OptimError::CountMismatch { params: params.len(), grads: grads.len() });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(OptimError::ShapeMismatch { index: i, param: p.shape().to_vec(), grad: g.shape().to_vec() });
            }
            if let Some(m) = self.m.get(i) {
                if m.shape() != p.shape() {
                    return Err(OptimError::ShapeMismatch { index: i, param: p.shape().to_vec(), grad: m.shape().to_vec() });
                }
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            if self.cfg.kind != OptimKind::Sgd {
                self.v = self.m.clone();
            }
        } else if self.m.len() != params.len() {
            return Err(OptimError::CountMismatch { params: params.len(), grads: self.m.len() });
        }
        self.t += 1;
        let c = self.cfg;
        let lr = self.lr;
        let t = self.t as f64;
        match c.kind {
            OptimKind::Sgd => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.m) {
                    for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        let vn = c.momentum * v.as_f64() + g.as_f64();
                        *v = E::from_f64_lossy(vn);
                        *p = E::from_f64_lossy(p.as_f64() - lr * vn);
                    }
                }
            }
            OptimKind::Adam | OptimKind::Radam => {
                let bc1 = 1.0 - c.beta1.powf(t);
                let bc2 = 1.0 - c.beta2.powf(t);
                let rect = match c.kind {
                    OptimKind::Radam => radam_rectifier(self.t, c.beta2).1,
                    _ => Some(1.0),
                };
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
                    for (((p, &g), m), v) in it {
                        let g = g.as_f64();
                        let mn = c.beta1 * m.as_f64() + (1.0 - c.beta1) * g;
                        let vn = c.beta2 * v.as_f64() + (1.0 - c.beta2) * g * g;
                        *m = E::from_f64_lossy(mn);
                        *v = E::from_f64_lossy(vn);
                        let m_hat = mn / bc1;
                        let delta = match rect {
                            Some(r) => r * m_hat / ((vn / bc2).sqrt() + c.eps),
                            None => m_hat,
                        };
                        *p = E::from_f64_lossy(p.as_f64() - lr * delta);
                    }
                }
            }
        }
        Ok(())
    }
}

/// `lr0 · d^epoch`.
pub fn lr_decay(lr0: f64, decay: f64, epoch: usize) -> Result<f64> {
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(OptimError::InvalidConfig(format!("decay {decay} outside (0, 1]")));
    }
    Ok(lr0 * decay.powi(epoch as i32))
}
