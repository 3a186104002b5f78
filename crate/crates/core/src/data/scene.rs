//! Seeded synthetic road scenes with lane markings and challenge perturbations.
//!
//! Geometry lives in normalized image coordinates: `y` runs from 0 (top) to 1
//! (bottom) and `x` from 0 (left) to 1 (right). A lane center follows
//! `x = a·y² + b·y + c` from `lane_top` down to the bottom edge.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BinaryMap, DataError, Result, Sample};
use crate::tensor::Tensor;

pub const MIN_LANE_FRACTION: f64 = 0.01;
pub const MAX_LANE_FRACTION: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dash {
    /// Length of one dash plus gap, in normalized rows.
    pub period: f64,
    /// Painted fraction of a period.
    pub duty: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub dash: Option<Dash>,
    pub color: [f32; 3],
}

impl LaneSpec {
    pub fn x_at(&self, y: f64) -> f64 {
        self.a * y * y + self.b * y + self.c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shadow {
    /// Convex polygon in normalized `(x, y)`.
    pub vertices: Vec<(f64, f64)>,
    /// Multiplier applied inside the polygon.
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub color: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbations {
    pub brightness: f64,
    pub shadows: Vec<Shadow>,
    pub occluders: Vec<Occluder>,
    pub blur: bool,
    /// Fraction of marking pixels worn away, also the density of road smudges.
    pub dirt: f64,
}

impl Default for Perturbations {
    fn default() -> Self {
        Self { brightness: 1.0, shadows: Vec::new(), occluders: Vec::new(), blur: false, dirt: 0.0 }
    }
}

/// Per-frame camera motion: lateral shift of the lanes and advance of the dash pattern.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoMotion {
    pub lateral: f64,
    pub longitudinal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Row where the road starts; sky above.
    pub horizon: f64,
    /// Row where lane markings start.
    pub lane_top: f64,
    pub lanes: Vec<LaneSpec>,
    /// Marking width in pixels.
    pub thickness: f64,
    pub perturb: Perturbations,
    pub ego: EgoMotion,
    /// Seeds the road texture and smudges.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenePreset {
    Normal,
    Curve,
    Occlude,
    Shadow,
    Bright,
    Blur,
    Dirty,
}

impl ScenePreset {
    pub const ALL: [ScenePreset; 7] =
        [Self::Normal, Self::Curve, Self::Occlude, Self::Shadow, Self::Bright, Self::Blur, Self::Dirty];
    pub const CHALLENGES: [ScenePreset; 6] = [Self::Curve, Self::Occlude, Self::Shadow, Self::Bright, Self::Blur, Self::Dirty];

    pub fn name(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Curve => "curve",
            Self::Occlude => "occlude",
            Self::Shadow => "shadow",
            Self::Bright => "bright",
            Self::Blur => "blur",
            Self::Dirty => "dirty",
        }
    }
}

impl fmt::Display for ScenePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenePreset {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s.to_ascii_lowercase())
            .ok_or_else(|| DataError::Invalid(format!("unknown scene preset {s:?}")))
    }
}

const WHITE: [f32; 3] = [0.92, 0.92, 0.9];
const YELLOW: [f32; 3] = [0.9, 0.78, 0.2];
const MAX_ATTEMPTS: u64 = 64;

impl SceneConfig {
    /// Random scene of `preset` whose rendering satisfies the scene invariants.
    ///
    /// Rejected draws are redrawn from a derived stream, so the result is a pure
    /// function of the arguments.
    pub fn sample(preset: ScenePreset, height: usize, width: usize, frames: usize, seed: u64) -> Result<Self> {
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(attempt);
            let cfg = Self::draw(preset, height, width, frames, &mut rng);
            if cfg.check_geometry().is_ok() && cfg.label_fraction_ok() {
                return Ok(cfg);
            }
        }
        Err(DataError::Degenerate(format!("no valid {preset} scene for seed {seed}")))
    }

    fn draw(preset: ScenePreset, height: usize, width: usize, frames: usize, rng: &mut ChaCha8Rng) -> Self {
        let horizon = rng.random_range(0.30..0.40);
        let vp_y = horizon - 0.1;
        let vp_x = rng.random_range(0.4..0.6);
        let lane_top = horizon + 0.04;
        let n = rng.random_range(2..=5usize);
        let spacing = rng.random_range(0.22..0.32);
        let center = vp_x + rng.random_range(-0.08..0.08);
        let bend = match preset {
            ScenePreset::Curve => rng.random_range(0.25..0.45) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            _ => rng.random_range(-0.06..0.06),
        };
        let yellow_left = rng.random_bool(0.3);
        let lanes = (0..n)
            .map(|i| {
                let xb = center + (i as f64 - (n as f64 - 1.0) / 2.0) * spacing;
                let s = (xb - vp_x) / (1.0 - vp_y);
                let outer = i == 0 || i == n - 1;
                let dash = (!outer && rng.random_bool(0.8)).then(|| Dash {
                    period: rng.random_range(0.15..0.3),
                    duty: rng.random_range(0.45..0.7),
                    phase: rng.random_range(0.0..1.0),
                });
                LaneSpec {
                    a: bend,
                    b: s - 2.0 * bend,
                    c: vp_x - s * vp_y + bend,
                    dash,
                    color: if i == 0 && yellow_left { YELLOW } else { WHITE },
                }
            })
            .collect();
        let thickness = (width as f64 / 64.0) * rng.random_range(0.95..1.3);
        let ego = EgoMotion { lateral: rng.random_range(-0.006..0.006), longitudinal: rng.random_range(0.01..0.04) };
        let mut perturb = Perturbations::default();
        match preset {
            ScenePreset::Normal | ScenePreset::Curve => {}
            ScenePreset::Occlude => {
                for _ in 0..rng.random_range(1..=3) {
                    let w = rng.random_range(0.12..0.25);
                    let h = w * rng.random_range(0.5..0.8);
                    let x0 = rng.random_range(0.05..0.95 - w);
                    let y0 = rng.random_range(lane_top..1.0 - h);
                    let shade = rng.random_range(0.05..0.6);
                    perturb.occluders.push(Occluder {
                        x0,
                        y0,
                        x1: x0 + w,
                        y1: y0 + h,
                        color: [shade, shade * rng.random_range(0.6..1.0), shade * rng.random_range(0.6..1.0)],
                    });
                }
            }
            ScenePreset::Shadow => {
                for _ in 0..rng.random_range(1..=3) {
                    let cx = rng.random_range(0.0..1.0);
                    let cy = rng.random_range(horizon..1.0);
                    let r = rng.random_range(0.1..0.3);
                    let vertices = (0..5)
                        .map(|k| {
                            let t = k as f64 / 5.0 * std::f64::consts::TAU + rng.random_range(0.0..0.5);
                            let rr = r * rng.random_range(0.7..1.0);
                            (cx + rr * t.cos(), cy + 0.6 * rr * t.sin())
                        })
                        .collect();
                    perturb.shadows.push(Shadow { vertices, strength: rng.random_range(0.3..0.55) });
                }
            }
            ScenePreset::Bright => perturb.brightness = rng.random_range(1.35..1.7),
            ScenePreset::Blur => perturb.blur = true,
            ScenePreset::Dirty => perturb.dirt = rng.random_range(0.25..0.45),
        }
        Self { height, width, frames, horizon, lane_top, lanes, thickness, perturb, ego, seed: rng.random() }
    }

    /// Lane centers at frame `t` for every rendered row, lane-major.
    fn centers(&self, t: usize) -> Vec<Vec<(usize, f64)>> {
        let top = (self.lane_top * self.height as f64).ceil() as usize;
        let shift = self.ego.lateral * t as f64;
        self.lanes
            .iter()
            .map(|l| {
                (top.min(self.height)..self.height)
                    .map(|r| {
                        let y = (r as f64 + 0.5) / self.height as f64;
                        (r, (l.x_at(y) + shift) * self.width as f64)
                    })
                    .collect()
            })
            .collect()
    }

    /// Lanes must keep a marking-free gap between neighbours on every rendered row of every frame.
    fn check_geometry(&self) -> Result<()> {
        if !(2..=5).contains(&self.lanes.len()) {
            return Err(DataError::Degenerate(format!("{} lanes, expected 2 to 5", self.lanes.len())));
        }
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(DataError::Degenerate("empty frame geometry".into()));
        }
        if !(self.thickness > 0.0) || !(0.0..1.0).contains(&self.lane_top) {
            return Err(DataError::Degenerate("invalid thickness or lane_top".into()));
        }
        for t in 0..self.frames {
            let centers = self.centers(t);
            for pair in centers.windows(2) {
                for (a, b) in pair[0].iter().zip(&pair[1]) {
                    if b.1 - a.1 <= self.thickness + 1.0 {
                        return Err(DataError::Degenerate(format!("lanes meet on row {} of frame {t}", a.0)));
                    }
                }
            }
        }
        Ok(())
    }

    fn label_fraction_ok(&self) -> bool {
        let f = self.marking_mask(self.frames - 1).0.fraction();
        (MIN_LANE_FRACTION..=MAX_LANE_FRACTION).contains(&f)
    }

    /// Marking pixels of frame `t` and, for each, the lane it belongs to.
    fn marking_mask(&self, t: usize) -> (BinaryMap, Vec<u8>) {
        let (h, w) = (self.height, self.width);
        let mut mask = BinaryMap::zeros(h, w);
        let mut owner = vec![u8::MAX; h * w];
        let half = self.thickness / 2.0;
        let advance = self.ego.longitudinal * t as f64;
        for (li, rows) in self.centers(t).iter().enumerate() {
            let lane = &self.lanes[li];
            for &(r, xc) in rows {
                if let Some(d) = lane.dash {
                    let y = (r as f64 + 0.5) / h as f64;
                    if ((y + advance) / d.period + d.phase).rem_euclid(1.0) >= d.duty {
                        continue;
                    }
                }
                let lo = (xc - half - 0.5).ceil().max(0.0) as usize;
                let hi = ((xc + half - 0.5).floor()).min(w as f64 - 1.0);
                if hi < 0.0 {
                    continue;
                }
                for c in lo..=hi as usize {
                    mask.set(r, c, true);
                    owner[r * w + c] = li as u8;
                }
            }
        }
        (mask, owner)
    }
}

/// Renders the `S` frames and the last frame's lane mask.
pub fn generate_sequence(cfg: &SceneConfig) -> Result<Sample> {
    cfg.check_geometry()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let texture: Vec<f32> = (0..h * w).map(|_| rng.random_range(-0.035..0.035)).collect();
    let worn: Vec<bool> = (0..h * w).map(|_| rng.random_bool(cfg.perturb.dirt.clamp(0.0, 1.0))).collect();
    let smudges: Vec<(f64, f64, f64, f32)> = (0..(cfg.perturb.dirt * 40.0).round() as usize)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(cfg.horizon..1.0),
                rng.random_range(0.01..0.05),
                rng.random_range(-0.15..0.1),
            )
        })
        .collect();

    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let (mask, owner) = cfg.marking_mask(t);
        let mut img = vec![0f32; 3 * h * w];
        for r in 0..h {
            let y = (r as f64 + 0.5) / h as f64;
            for c in 0..w {
                let x = (c as f64 + 0.5) / w as f64;
                let i = r * w + c;
                let mut px = if y < cfg.horizon {
                    let k = (y / cfg.horizon) as f32;
                    [0.55 + 0.15 * k, 0.65 + 0.1 * k, 0.8 - 0.05 * k]
                } else {
                    let g = 0.32 + texture[i];
                    [g, g, g + 0.01]
                };
                if mask.get(r, c) && !worn[i] {
                    px = cfg.lanes[owner[i] as usize].color;
                }
                for &(sx, sy, sr, delta) in &smudges {
                    let (dx, dy) = ((x - sx) * w as f64 / h as f64, y - sy);
                    if y >= cfg.horizon && dx * dx + dy * dy < sr * sr {
                        px = px.map(|v| v + delta);
                    }
                }
                for s in &cfg.perturb.shadows {
                    if inside_convex(&s.vertices, x, y) {
                        px = px.map(|v| v * s.strength as f32);
                    }
                }
                for o in &cfg.perturb.occluders {
                    if (o.x0..o.x1).contains(&x) && (o.y0..o.y1).contains(&y) {
                        px = o.color;
                    }
                }
                for (ch, v) in px.iter().enumerate() {
                    img[ch * h * w + i] = (v * cfg.perturb.brightness as f32).clamp(0.0, 1.0);
                }
            }
        }
        if cfg.perturb.blur {
            img = box_blur(&img, h, w);
        }
        frames.push(Tensor::from_vec(&[3, h, w], img).expect("frame shape"));
    }
    let label = cfg.marking_mask(cfg.frames - 1).0;
    let f = label.fraction();
    if !(MIN_LANE_FRACTION..=MAX_LANE_FRACTION).contains(&f) {
        return Err(DataError::Degenerate(format!("lane fraction {f:.4} outside [{MIN_LANE_FRACTION}, {MAX_LANE_FRACTION}]")));
    }
    Ok(Sample { frames, label: Some(label), source: format!("synthetic:{:016x}", cfg.seed) })
}

/// Sequence `i` of a synthetic set, seeded from `(seed, preset, i)`.
pub fn synthetic_sample(preset: ScenePreset, i: usize, height: usize, width: usize, frames: usize, seed: u64) -> Result<Sample> {
    let tag = ScenePreset::ALL.iter().position(|&p| p == preset).unwrap_or(0) as u64;
    let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ tag.wrapping_mul(0x94D0_49BB_1331_11EB);
    let mut sample = generate_sequence(&SceneConfig::sample(preset, height, width, frames, s)?)?;
    sample.source = format!("{preset}/{i:05}");
    Ok(sample)
}

/// `n` sequences of `preset`; element `i` equals [`synthetic_sample`] at `i`.
pub fn synthetic_set(preset: ScenePreset, n: usize, height: usize, width: usize, frames: usize, seed: u64) -> Result<Vec<Sample>> {
    (0..n).map(|i| synthetic_sample(preset, i, height, width, frames, seed)).collect()
}

fn inside_convex(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    if poly.len() < 3 {
        return false;
    }
    let mut sign = 0.0;
    for (i, &(x0, y0)) in poly.iter().enumerate() {
        let (x1, y1) = poly[(i + 1) % poly.len()];
        let cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
        if cross != 0.0 {
            if sign != 0.0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    true
}

/// 3×3 box blur with clamped borders, per channel.
fn box_blur(img: &[f32], h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0f32; img.len()];
    for ch in 0..3 {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0f32;
                for dr in [-1isize, 0, 1] {
                    for dc in [-1isize, 0, 1] {
                        let rr = (r as isize + dr).clamp(0, h as isize - 1) as usize;
                        let cc = (c as isize + dc).clamp(0, w as isize - 1) as usize;
                        acc += plane[rr * w + cc];
                    }
                }
                out[ch * h * w + r * w + c] = acc / 9.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let cfg = SceneConfig::sample(ScenePreset::Normal, 64, 128, 5, 3).unwrap();
        let a = generate_sequence(&cfg).unwrap();
        let b = generate_sequence(&cfg).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn still_camera_repeats_frames() {
        let mut cfg = SceneConfig::sample(ScenePreset::Shadow, 64, 128, 5, 11).unwrap();
        cfg.ego = EgoMotion::default();
        let s = generate_sequence(&cfg).unwrap();
        assert!(s.frames.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn crossing_lanes_rejected() {
        let mut cfg = SceneConfig::sample(ScenePreset::Normal, 64, 128, 5, 5).unwrap();
        cfg.lanes[1] = cfg.lanes[0].clone();
        assert!(matches!(generate_sequence(&cfg), Err(DataError::Degenerate(_))));
    }

    #[test]
    fn convex_test() {
        let sq = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        assert!(inside_convex(&sq, 0.5, 0.5));
        assert!(!inside_convex(&sq, 1.5, 0.5));
    }
}
