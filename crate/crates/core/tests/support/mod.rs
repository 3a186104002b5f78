//! Shared helpers for the integration tests and the acceptance suite:
//! seeded generators, naive-loop oracles, and the finite-difference case table.
#![allow(dead_code)]

use std::collections::HashMap;

use laneforge::autograd::{finite_difference_check, FdReport, Var};
use laneforge::data::BinaryMap;
use laneforge::eval::{ConfusionCounts, DbscanParams};
use laneforge::objectives::{focal_loss, lane_probability, poly_loss, weighted_ce, LossConfig};
use laneforge::pretrain::reconstruction_loss;
use laneforge::tensor::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

/// Values with `|v| ≥ gap`, away from the kinks of relu and friends.
pub fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    uniform(r, shape, -1.0, 1.0).map(|v| if v >= 0.0 { v + gap } else { v - gap })
}

pub fn binary(r: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| if r.random_bool(p) { 1.0 } else { 0.0 }).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

pub fn random_map(r: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> BinaryMap {
    BinaryMap::from_vec(h, w, (0..h * w).map(|_| u8::from(r.random_bool(p))).collect()).unwrap()
}

/// `Σ v ⊙ R` for a fixed random `R`, so every output coordinate reaches the gradient.
pub fn project<'t>(v: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let r = uniform(&mut rng(seed ^ 0x9e37), &v.shape(), -1.0, 1.0);
    v.mul(v.tape().constant(r))?.sum()
}

// ---------------------------------------------------------------- oracles

/// Same-padded stride-1 cross-correlation, `x: N×C×H×W`, `w: O×C×kh×kw`.
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [o, _, kh, kw] = w.shape().try_into().unwrap();
    let (ph, pw) = ((kh as isize - 1) / 2, (kw as isize - 1) / 2);
    let mut out = vec![0.0; n * o * h * wd];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..h {
                for xx in 0..wd {
                    let mut s = b.map_or(0.0, |b| b.data()[oi]);
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = y as isize + ky as isize - ph;
                                let ix = xx as isize + kx as isize - pw;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += x.at(&[ni, ci, iy as usize, ix as usize]) * w.at(&[oi, ci, ky, kx]);
                                }
                            }
                        }
                    }
                    out[((ni * o + oi) * h + y) * wd + xx] = s;
                }
            }
        }
    }
    Tensor::from_vec(&[n, o, h, wd], out).unwrap()
}

/// Per-channel same-padded cross-correlation, `w: C×kh×kw`.
pub fn naive_depthwise(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [_, kh, kw] = w.shape().try_into().unwrap();
    let (ph, pw) = ((kh as isize - 1) / 2, (kw as isize - 1) / 2);
    let mut out = vec![0.0; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..wd {
                    let mut s = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = y as isize + ky as isize - ph;
                            let ix = xx as isize + kx as isize - pw;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                s += x.at(&[ni, ci, iy as usize, ix as usize]) * w.at(&[ci, ky, kx]);
                            }
                        }
                    }
                    out[((ni * c + ci) * h + y) * wd + xx] = s;
                }
            }
        }
    }
    Tensor::from_vec(x.shape(), out).unwrap()
}

pub fn naive_maxpool2(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let mut out = Vec::new();
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.at(&[ni, ci, 2 * y + dy, 2 * xx + dx]));
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, h / 2, w / 2], out).unwrap()
}

/// ×2 upsampling: `out[n,o,2i+a,2j+b] = Σ_c x[n,c,i,j]·w[c,o,a,b] + bias[o]`.
pub fn naive_conv_transpose2(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let o = w.shape()[1];
    let mut out = vec![0.0; n * o * 4 * h * wd];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..2 * h {
                for xx in 0..2 * wd {
                    let mut s = b.map_or(0.0, |b| b.data()[oi]);
                    for ci in 0..c {
                        s += x.at(&[ni, ci, y / 2, xx / 2]) * w.at(&[ci, oi, y % 2, xx % 2]);
                    }
                    out[((ni * o + oi) * 2 * h + y) * 2 * wd + xx] = s;
                }
            }
        }
    }
    Tensor::from_vec(&[n, o, 2 * h, 2 * wd], out).unwrap()
}

pub fn confusion_loop(pred: &BinaryMap, truth: &BinaryMap) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for r in 0..pred.height() {
        for col in 0..pred.width() {
            match (pred.get(r, col), truth.get(r, col)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    c
}

/// Textbook O(n²) DBSCAN with the library's border rule: a non-core point joins
/// the cluster of its nearest core neighbour, ties to the smaller coordinates.
pub fn dbscan_reference(points: &[(f64, f64)], p: DbscanParams) -> Vec<Option<usize>> {
    let n = points.len();
    let d2 = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    let eps2 = p.eps * p.eps;
    let nbrs: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| d2(points[i], points[j]) <= eps2).collect()).collect();
    let core: Vec<bool> = nbrs.iter().map(|v| v.len() >= p.min_pts).collect();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || label[s].is_some() {
            continue;
        }
        label[s] = Some(next);
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for &j in &nbrs[i] {
                if core[j] && label[j].is_none() {
                    label[j] = Some(next);
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    let mut out = label.clone();
    for i in (0..n).filter(|&i| !core[i]) {
        let best = nbrs[i].iter().copied().filter(|&j| core[j]).min_by(|&a, &b| {
            d2(points[i], points[a])
                .total_cmp(&d2(points[i], points[b]))
                .then(points[a].0.total_cmp(&points[b].0))
                .then(points[a].1.total_cmp(&points[b].1))
        });
        out[i] = best.and_then(|j| label[j]);
    }
    out
}

/// Equal up to a bijective renaming of cluster ids; noise must match exactly.
pub fn same_partition(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let (mut fwd, mut back) = (HashMap::new(), HashMap::new());
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (None, None) => {}
            (Some(x), Some(y)) => {
                if *fwd.entry(*x).or_insert(*y) != *y || *back.entry(*y).or_insert(*x) != *x {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

/// Points along a few noisy strokes plus scattered noise.
pub fn stroke_points(r: &mut ChaCha8Rng, max: usize) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    let strokes = r.random_range(1..=4);
    for _ in 0..strokes {
        let (x0, slope) = (r.random_range(0.0..100.0), r.random_range(-1.0..1.0));
        let len = r.random_range(10..80);
        for y in 0..len {
            pts.push(((y as f64).round(), (x0 + slope * y as f64 + r.random_range(-1.5..1.5)).round()));
        }
    }
    let noise = r.random_range(0..40);
    for _ in 0..noise {
        pts.push((r.random_range(0.0..100.0f64).round(), r.random_range(-50.0..150.0f64).round()));
    }
    pts.truncate(max);
    pts
}

// ---------------------------------------------------------- gradient cases

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;
pub const CASES_PER_OP: u64 = 20;

pub struct GradCase {
    pub name: &'static str,
    pub run: fn(u64) -> FdReport,
}

fn check<F>(x: &Tensor<f64>, f: F) -> FdReport
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    finite_difference_check(f, x, FD_STEP).unwrap()
}

fn small_nchw(r: &mut ChaCha8Rng) -> [usize; 4] {
    [r.random_range(1..=2), r.random_range(1..=3), 2 * r.random_range(1..=3), 2 * r.random_range(1..=3)]
}

macro_rules! unary {
    ($name:literal, $gen:expr, $method:ident($($arg:expr),*)) => {
        GradCase {
            name: $name,
            run: |seed| {
                let mut r = rng(seed);
                let shape = small_nchw(&mut r);
                let gen: fn(&mut ChaCha8Rng, &[usize]) -> Tensor<f64> = $gen;
                let x = gen(&mut r, &shape);
                check(&x, |v| project(v.$method($($arg),*)?, seed))
            },
        }
    };
}

fn dense(r: &mut ChaCha8Rng, s: &[usize]) -> Tensor<f64> {
    uniform(r, s, -1.5, 1.5)
}

fn positive(r: &mut ChaCha8Rng, s: &[usize]) -> Tensor<f64> {
    uniform(r, s, 0.2, 2.0)
}

fn gapped(r: &mut ChaCha8Rng, s: &[usize]) -> Tensor<f64> {
    away_from_zero(r, s, 0.05)
}

fn probs(r: &mut ChaCha8Rng, s: &[usize]) -> Tensor<f64> {
    uniform(r, s, 0.05, 0.95)
}

/// Binary op checked in its left or right argument, `other_shape` derived from the checked one.
fn binary_case(seed: u64, right: bool, broadcast: bool, op: for<'t> fn(Var<'t, f64>, Var<'t, f64>) -> Result<Var<'t, f64>>) -> FdReport {
    let mut r = rng(seed);
    let shape = small_nchw(&mut r);
    let other_shape = if broadcast { vec![1, shape[1], 1, 1] } else { shape.to_vec() };
    let x = dense(&mut r, &shape);
    let y = dense(&mut r, &other_shape);
    if right {
        check(&y, |v| project(op(v.tape().constant(x.clone()), v)?, seed))
    } else {
        check(&x, |v| project(op(v, v.tape().constant(y.clone()))?, seed))
    }
}

struct ConvShapes {
    x: Tensor<f64>,
    w: Tensor<f64>,
    b: Tensor<f64>,
}

/// Covers both weight-gradient paths (≤ 32 and > 32 output channels) and multi-sample blocks.
fn conv_shapes(seed: u64) -> ConvShapes {
    let mut r = rng(seed);
    let n = r.random_range(1..=3);
    let c = r.random_range(1..=3);
    let o = if seed % 4 == 0 { 33 + r.random_range(0..3) } else { r.random_range(1..=4) };
    let k = [1, 3, 5][r.random_range(0..3)];
    let (h, w) = (r.random_range(2..=5), r.random_range(2..=5));
    ConvShapes { x: dense(&mut r, &[n, c, h, w]), w: dense(&mut r, &[o, c, k, k]), b: dense(&mut r, &[o]) }
}

pub fn grad_cases() -> Vec<GradCase> {
    vec![
        GradCase { name: "add", run: |s| binary_case(s, s % 2 == 1, s % 3 == 0, |a, b| a.add(b)) },
        GradCase { name: "sub", run: |s| binary_case(s, s % 2 == 1, s % 3 == 0, |a, b| a.sub(b)) },
        GradCase { name: "mul", run: |s| binary_case(s, s % 2 == 1, s % 3 == 0, |a, b| a.mul(b)) },
        unary!("add_scalar", dense, add_scalar(0.7)),
        unary!("mul_scalar", dense, mul_scalar(-1.9)),
        unary!("neg", dense, neg()),
        unary!("one_minus", dense, one_minus()),
        unary!("relu", gapped, relu()),
        unary!("sigmoid", dense, sigmoid()),
        unary!("tanh", dense, tanh()),
        unary!("log", positive, log()),
        unary!("exp", dense, exp()),
        unary!("pow", positive, pow(2.3)),
        unary!("clamp", gapped, clamp(-0.6, 0.6)),
        unary!("sum", dense, sum()),
        unary!("mean", dense, mean()),
        GradCase {
            name: "sum_axis",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let x = dense(&mut r, &s);
                let axis = (seed % 4) as usize;
                check(&x, |v| project(v.sum_axis(axis)?, seed))
            },
        },
        GradCase {
            name: "reshape",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let x = dense(&mut r, &s);
                let n = x.len();
                check(&x, |v| project(v.reshape(&[n])?.reshape(&[1, n])?, seed))
            },
        },
        GradCase {
            name: "narrow",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let x = dense(&mut r, &s);
                let axis = (seed % 4) as usize;
                let len = s[axis].div_ceil(2);
                let start = s[axis] - len;
                check(&x, |v| project(v.narrow(axis, start, len)?, seed))
            },
        },
        GradCase {
            name: "concat",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let x = dense(&mut r, &s);
                let other = dense(&mut r, &s);
                let axis = (seed % 4) as usize;
                check(&x, |v| {
                    let o = v.tape().constant(other.clone());
                    project(Var::concat(&[o, v, v], axis)?, seed)
                })
            },
        },
        GradCase {
            name: "index_select",
            run: |seed| {
                let mut r = rng(seed);
                let x = dense(&mut r, &[4, 3]);
                let idx: Vec<usize> = (0..6).map(|_| r.random_range(0..4)).collect();
                check(&x, |v| project(v.index_select(&idx)?, seed))
            },
        },
        GradCase {
            name: "conv2d.input",
            run: |seed| {
                let c = conv_shapes(seed);
                check(&c.x, |v| {
                    let t = v.tape();
                    project(v.conv2d(t.constant(c.w.clone()), Some(t.constant(c.b.clone())))?, seed)
                })
            },
        },
        GradCase {
            name: "conv2d.weight",
            run: |seed| {
                let c = conv_shapes(seed);
                check(&c.w, |w| {
                    let t = w.tape();
                    project(t.constant(c.x.clone()).conv2d(w, Some(t.constant(c.b.clone())))?, seed)
                })
            },
        },
        GradCase {
            name: "conv2d.bias",
            run: |seed| {
                let c = conv_shapes(seed);
                check(&c.b, |b| {
                    let t = b.tape();
                    project(t.constant(c.x.clone()).conv2d(t.constant(c.w.clone()), Some(b))?, seed)
                })
            },
        },
        GradCase {
            name: "depthwise_conv2d.input",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let x = dense(&mut r, &s);
                let w = dense(&mut r, &[s[1], 3, [1, 3, 5][(seed % 3) as usize]]);
                check(&x, |v| project(v.depthwise_conv2d(v.tape().constant(w.clone()))?, seed))
            },
        },
        GradCase {
            name: "depthwise_conv2d.weight",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let x = dense(&mut r, &s);
                let w = dense(&mut r, &[s[1], [1, 3, 5][(seed % 3) as usize], 3]);
                check(&w, |w| project(w.tape().constant(x.clone()).depthwise_conv2d(w)?, seed))
            },
        },
        unary!("maxpool2", dense, maxpool2()),
        GradCase {
            name: "conv_transpose2.input",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let x = dense(&mut r, &s);
                let w = dense(&mut r, &[s[1], 2, 2, 2]);
                let b = dense(&mut r, &[2]);
                check(&x, |v| {
                    let t = v.tape();
                    project(v.conv_transpose2(t.constant(w.clone()), Some(t.constant(b.clone())))?, seed)
                })
            },
        },
        GradCase {
            name: "conv_transpose2.weight",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let x = dense(&mut r, &s);
                let w = dense(&mut r, &[s[1], 3, 2, 2]);
                check(&w, |w| project(w.tape().constant(x.clone()).conv_transpose2(w, None)?, seed))
            },
        },
        GradCase {
            name: "conv_transpose2.bias",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let x = dense(&mut r, &s);
                let w = dense(&mut r, &[s[1], 3, 2, 2]);
                let b = dense(&mut r, &[3]);
                check(&b, |b| {
                    let t = b.tape();
                    project(t.constant(x.clone()).conv_transpose2(t.constant(w.clone()), Some(b))?, seed)
                })
            },
        },
        GradCase {
            name: "softmax",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let x = dense(&mut r, &s);
                let axis = (seed % 4) as usize;
                check(&x, |v| project(v.softmax(axis)?, seed))
            },
        },
        unary!("softmax_over_channels", dense, softmax_over_channels()),
        GradCase {
            name: "linear.input",
            run: |seed| {
                let mut r = rng(seed);
                let (n, i, o) = (r.random_range(1..=4), r.random_range(1..=5), r.random_range(1..=5));
                let x = dense(&mut r, &[n, i]);
                let w = dense(&mut r, &[o, i]);
                let b = dense(&mut r, &[o]);
                check(&x, |v| {
                    let t = v.tape();
                    project(v.linear(t.constant(w.clone()), Some(t.constant(b.clone())))?, seed)
                })
            },
        },
        GradCase {
            name: "linear.weight",
            run: |seed| {
                let mut r = rng(seed);
                let (n, i, o) = (r.random_range(1..=4), r.random_range(1..=5), r.random_range(1..=5));
                let x = dense(&mut r, &[n, i]);
                let w = dense(&mut r, &[o, i]);
                check(&w, |w| project(w.tape().constant(x.clone()).linear(w, None)?, seed))
            },
        },
        GradCase {
            name: "linear.bias",
            run: |seed| {
                let mut r = rng(seed);
                let (n, i, o) = (r.random_range(1..=4), r.random_range(1..=5), r.random_range(1..=5));
                let x = dense(&mut r, &[n, i]);
                let w = dense(&mut r, &[o, i]);
                let b = dense(&mut r, &[o]);
                check(&b, |b| {
                    let t = b.tape();
                    project(t.constant(x.clone()).linear(t.constant(w.clone()), Some(b))?, seed)
                })
            },
        },
        GradCase {
            name: "lane_probability",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let x = dense(&mut r, &[s[0], 2, s[2], s[3]]);
                check(&x, |v| project(lane_probability(v).unwrap(), seed))
            },
        },
        GradCase {
            name: "weighted_ce",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let shape = [s[0], 1, s[2], s[3]];
                let p = probs(&mut r, &shape);
                let y = binary(&mut r, &shape, 0.3);
                let cfg = LossConfig { omega1: r.random_range(0.5..20.0), omega0: r.random_range(0.3..1.5), ..LossConfig::default() };
                check(&p, |v| Ok(weighted_ce(v, v.tape().constant(y.clone()), &cfg).unwrap()))
            },
        },
        GradCase {
            name: "poly_loss",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let shape = [s[0], 1, s[2], s[3]];
                let p = probs(&mut r, &shape);
                let y = binary(&mut r, &shape, 0.3);
                let cfg = LossConfig {
                    alpha: r.random_range(0.5..2.0),
                    gamma: r.random_range(0.0..2.0),
                    epsilon: [0.0, 0.5, 1.0, 2.0][(seed % 4) as usize],
                    ..LossConfig::default()
                };
                check(&p, |v| Ok(poly_loss(v, v.tape().constant(y.clone()), &cfg).unwrap()))
            },
        },
        GradCase {
            name: "focal_loss",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let shape = [s[0], 1, s[2], s[3]];
                let p = probs(&mut r, &shape);
                let y = binary(&mut r, &shape, 0.3);
                let eps = [0.0, 1.0, 2.0][(seed % 3) as usize];
                check(&p, |v| Ok(focal_loss(v, v.tape().constant(y.clone()), 1.0, eps).unwrap()))
            },
        },
        GradCase {
            name: "reconstruction_loss",
            run: |seed| {
                let mut r = rng(seed);
                let s = small_nchw(&mut r);
                let shape = [s[0], 3, s[2], s[3]];
                let x = dense(&mut r, &shape);
                let target = uniform(&mut r, &shape, 0.0, 1.0);
                check(&x, |v| reconstruction_loss(v, v.tape().constant(target.clone())))
            },
        },
    ]
}

/// Worst report of every case over `CASES_PER_OP` seeds.
pub fn run_grad_case(case: &GradCase) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut kinks = 0;
    for seed in 0..CASES_PER_OP {
        let rep = (case.run)(seed * 7919 + 17);
        worst = worst.max(rep.max_rel_error);
        kinks += rep.non_smooth.len();
    }
    (worst, kinks)
}
