//! Geometric augmentation applied identically to every frame and the label.

use rand::Rng;

use super::{BinaryMap, Sample};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augment {
    HFlip,
    /// Counter-clockwise rotation about the image center, in degrees.
    Rotate(f64),
    /// Crop `height×width` at `(top, left)` and resize back to the input size.
    CropResize { top: usize, left: usize, height: usize, width: usize },
}

impl Augment {
    /// One of the three ops with parameters in the customary ranges.
    pub fn random<R: Rng>(rng: &mut R, height: usize, width: usize) -> Self {
        match rng.random_range(0..3) {
            0 => Self::HFlip,
            1 => Self::Rotate(rng.random_range(-5.0..=5.0)),
            _ => {
                let scale = rng.random_range(0.8..1.0);
                let ch = ((height as f64 * scale).round() as usize).max(1);
                let cw = ((width as f64 * scale).round() as usize).max(1);
                Self::CropResize {
                    top: rng.random_range(0..=height - ch),
                    left: rng.random_range(0..=width - cw),
                    height: ch,
                    width: cw,
                }
            }
        }
    }
}

/// Bilinear sample of one plane at fractional `(y, x)`; zero outside.
fn bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
    let at = |r: f64, c: f64| -> f32 {
        if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
            0.0
        } else {
            plane[r as usize * w + c as usize]
        }
    };
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
    let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples `planes` planes of `h×w` through `src(row, col) -> (y, x)`.
fn resample(data: &[f32], planes: usize, h: usize, w: usize, src: impl Fn(usize, usize) -> (f64, f64)) -> Vec<f32> {
    let mut out = vec![0f32; data.len()];
    for r in 0..h {
        for c in 0..w {
            let (y, x) = src(r, c);
            for p in 0..planes {
                let plane = &data[p * h * w..(p + 1) * h * w];
                out[p * h * w + r * w + c] = bilinear(plane, h, w, y, x).clamp(0.0, 1.0);
            }
        }
    }
    out
}

fn transform(data: &[f32], planes: usize, h: usize, w: usize, op: Augment) -> Vec<f32> {
    match op {
        Augment::HFlip => {
            let mut out = data.to_vec();
            for row in out.chunks_exact_mut(w) {
                row.reverse();
            }
            out
        }
        Augment::Rotate(0.0) => data.to_vec(),
        Augment::Rotate(deg) => {
            let (s, c) = deg.to_radians().sin_cos();
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            resample(data, planes, h, w, |r, col| {
                let (dy, dx) = (r as f64 - cy, col as f64 - cx);
                (cy + c * dy - s * dx, cx + s * dy + c * dx)
            })
        }
        Augment::CropResize { top, left, height, width } => {
            let top = top.min(h - 1);
            let left = left.min(w - 1);
            let ch = height.clamp(1, h - top);
            let cw = width.clamp(1, w - left);
            let (sy, sx) = (ch as f64 / h as f64, cw as f64 / w as f64);
            resample(data, planes, h, w, |r, c| {
                let y = (top as f64 + (r as f64 + 0.5) * sy - 0.5).clamp(top as f64, (top + ch - 1) as f64);
                let x = (left as f64 + (c as f64 + 0.5) * sx - 0.5).clamp(left as f64, (left + cw - 1) as f64);
                (y, x)
            })
        }
    }
}

/// Applies `op` to all frames and the label; the label is re-binarized at 0.5.
pub fn augment(sample: &Sample, op: Augment) -> Sample {
    let frames = sample
        .frames
        .iter()
        .map(|f| {
            let s = f.shape();
            Tensor::from_vec(s, transform(f.data(), s[0], s[1], s[2], op)).expect("same shape")
        })
        .collect();
    let label = sample.label.as_ref().map(|l| {
        let (h, w) = (l.height(), l.width());
        let plane: Vec<f32> = l.data().iter().map(|&v| f32::from(v)).collect();
        let out = transform(&plane, 1, h, w, op);
        BinaryMap::from_vec(h, w, out.iter().map(|&v| u8::from(v >= 0.5)).collect()).expect("same shape")
    });
    Sample { frames, label, source: sample.source.clone() }
}
