//! Lane instances from a binary prediction and their visualization.

use serde::{Deserialize, Serialize};

use super::{dbscan, fit_curve, CurveFit, DbscanParams, EvalError, Result};
use crate::data::BinaryMap;
use crate::tensor::Tensor;

pub const OVERLAY_ALPHA: f32 = 0.6;

pub const PALETTE: [[f32; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.4, 1.0],
    [1.0, 0.85, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
];

pub fn instance_color(index: usize) -> [f32; 3] {
    PALETTE[index % PALETTE.len()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneInstance {
    pub id: usize,
    /// `(row, col)` members.
    pub pixels: Vec<(usize, usize)>,
    pub fit: Option<CurveFit>,
    pub color: usize,
}

/// Clusters the lane pixels of `mask` and fits a curve to every cluster.
pub fn lane_instances(mask: &BinaryMap, params: DbscanParams) -> Vec<LaneInstance> {
    let pixels = mask.points();
    let pts: Vec<(f64, f64)> = pixels.iter().map(|&(r, c)| (r as f64, c as f64)).collect();
    let labels = dbscan(&pts, params);
    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); count];
    for (&px, l) in pixels.iter().zip(&labels) {
        if let Some(id) = l {
            groups[*id].push(px);
        }
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(id, pixels)| {
            let pts: Vec<(f64, f64)> = pixels.iter().map(|&(r, c)| (r as f64, c as f64)).collect();
            LaneInstance { id, fit: fit_curve(&pts).ok(), pixels, color: id }
        })
        .collect()
}

pub enum Overlay<'a> {
    /// Every set pixel in one color.
    Mask(&'a BinaryMap, [f32; 3]),
    /// Member pixels in per-instance colors.
    Instances(&'a [LaneInstance]),
    /// Fitted curves over each instance's row span.
    Curves(&'a [LaneInstance]),
}

/// Alpha-blends lane pixels over a `3×H×W` frame: `(1 − α)·frame + α·tint`.
pub fn render_overlay(frame: &Tensor<f32>, overlay: Overlay<'_>) -> Result<Tensor<f32>> {
    let s = frame.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(EvalError::ShapeMismatch(format!("frame {s:?} is not 3×H×W")));
    }
    let (h, w) = (s[1], s[2]);
    let mut tints: Vec<Option<[f32; 3]>> = vec![None; h * w];
    match overlay {
        Overlay::Mask(m, color) => {
            if (m.height(), m.width()) != (h, w) {
                return Err(EvalError::ShapeMismatch(format!("mask {}×{} vs frame {h}×{w}", m.height(), m.width())));
            }
            for (t, &v) in tints.iter_mut().zip(m.data()) {
                if v != 0 {
                    *t = Some(color);
                }
            }
        }
        Overlay::Instances(instances) => {
            for inst in instances {
                for &(r, c) in &inst.pixels {
                    if r >= h || c >= w {
                        return Err(EvalError::ShapeMismatch(format!("pixel ({r}, {c}) outside {h}×{w}")));
                    }
                    tints[r * w + c] = Some(instance_color(inst.color));
                }
            }
        }
        Overlay::Curves(instances) => {
            for inst in instances {
                let (Some(fit), Some(lo), Some(hi)) =
                    (inst.fit, inst.pixels.iter().map(|p| p.0).min(), inst.pixels.iter().map(|p| p.0).max())
                else {
                    continue;
                };
                for r in lo..=hi.min(h - 1) {
                    let c = fit.eval(r as f64).round();
                    if c >= 0.0 && (c as usize) < w {
                        tints[r * w + c as usize] = Some(instance_color(inst.color));
                    }
                }
            }
        }
    }
    let mut out = frame.clone();
    let d = out.data_mut();
    for (i, t) in tints.iter().enumerate() {
        if let Some(color) = t {
            for ch in 0..3 {
                let v = &mut d[ch * h * w + i];
                *v = (1.0 - OVERLAY_ALPHA) * *v + OVERLAY_ALPHA * color[ch];
            }
        }
    }
    Ok(out)
}
