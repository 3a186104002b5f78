//! Pixel metrics, model complexity, lane instance post-processing, and reports.
//!
//! ```
//! use laneforge::eval::{metrics, ConfusionCounts};
//!
//! let m = metrics(&ConfusionCounts { tp: 8, fp: 2, fn_: 2, tn: 88 }).unwrap();
//! assert_eq!((m.accuracy, m.precision, m.recall), (0.96, 0.8, 0.8));
//! assert!((m.f1 - 0.8).abs() < 1e-15);
//! ```

mod cluster;
mod curve;
mod overlay;
mod report;

pub use cluster::{dbscan, Cluster, DbscanParams};
pub use curve::{fit_curve, CurveFit};
pub use overlay::{instance_color, lane_instances, render_overlay, LaneInstance, Overlay, OVERLAY_ALPHA, PALETTE};
pub use report::{write_csv, write_json, ReportRow};

use serde::{Deserialize, Serialize};

use crate::data::BinaryMap;
use crate::model::{layer_table, ModelSpec};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no pixels to evaluate")]
    Empty,
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// Pixel-wise counts of `pred` against `truth`.
pub fn confusion(pred: &BinaryMap, truth: &BinaryMap) -> Result<ConfusionCounts> {
    if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
        return Err(EvalError::ShapeMismatch(format!(
            "prediction {}×{} vs truth {}×{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p != 0, t != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `TP + FP = 0`; precision reported as 0.
    pub precision_degenerate: bool,
    /// `TP + FN = 0`; recall reported as 0.
    pub recall_degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let (precision, precision_degenerate) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_degenerate) = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(Metrics {
        accuracy: (c.tp + c.tn) as f64 / total as f64,
        precision,
        recall,
        f1,
        precision_degenerate,
        recall_degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complexity {
    pub params: u64,
    pub macs: u64,
}

/// Parameter and multiply-accumulate totals of one forward pass over `S` frames.
pub fn count_params_macs(spec: &ModelSpec) -> Complexity {
    let table = layer_table(spec);
    Complexity { params: table.iter().map(|l| l.param_count()).sum(), macs: table.iter().map(|l| l.macs).sum() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_flags() {
        let m = metrics(&ConfusionCounts { tp: 0, fp: 0, fn_: 3, tn: 5 }).unwrap();
        assert!(m.precision_degenerate && !m.recall_degenerate);
        assert_eq!((m.precision, m.f1), (0.0, 0.0));
        assert!(matches!(metrics(&ConfusionCounts::default()), Err(EvalError::Empty)));
    }

    #[test]
    fn counts() {
        let t = BinaryMap::zeros(10, 10);
        let p = BinaryMap::from_vec(10, 10, vec![1; 100]).unwrap();
        assert_eq!(confusion(&p, &t).unwrap(), ConfusionCounts { tp: 0, fp: 100, fn_: 0, tn: 0 });
        assert_eq!(confusion(&t, &t).unwrap().tn, 100);
        assert!(confusion(&p, &BinaryMap::zeros(10, 9)).is_err());
    }
}
