//! Convolution, pooling and upsampling kernels against naive loops, forward and backward,
//! including shapes large enough for the banded column path and the wide weight-gradient path.

mod support;

use laneforge::autograd::Tape;
use laneforge::tensor::Tensor;
use rand::Rng;
use support::{naive_conv2d, naive_conv_transpose2, naive_depthwise, naive_maxpool2, rng, uniform};

const TOL: f64 = 1e-6;

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.to_f64_vec().iter().zip(b.to_f64_vec()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_diff32(a: &Tensor<f32>, b: &Tensor<f64>) -> f64 {
    max_diff(&a.cast::<f64>(), b)
}

/// Gradients of `Σ R ⊙ conv(x, w)` by direct summation.
fn naive_conv2d_grads(x: &Tensor<f64>, w: &Tensor<f64>, r: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [o, _, kh, kw] = w.shape().try_into().unwrap();
    let (ph, pw) = ((kh as isize - 1) / 2, (kw as isize - 1) / 2);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..h {
                for xx in 0..wd {
                    let g = r.at(&[ni, oi, y, xx]);
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = y as isize + ky as isize - ph;
                                let ix = xx as isize + kx as isize - pw;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    let xi = ((ni * c + ci) * h + iy as usize) * wd + ix as usize;
                                    let wi = ((oi * c + ci) * kh + ky) * kw + kx;
                                    dx[xi] += g * w.data()[wi];
                                    dw[wi] += g * x.data()[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (Tensor::from_vec(x.shape(), dx).unwrap(), Tensor::from_vec(w.shape(), dw).unwrap())
}

#[test]
fn conv2d_matches_naive() {
    let mut r = rng(21);
    for case in 0..20 {
        let (n, c, o) = (r.random_range(1..3), r.random_range(1..6), if case % 4 == 0 { 36 } else { r.random_range(1..8) });
        let (h, w) = (r.random_range(3..12), r.random_range(3..12));
        let (kh, kw) = [(1, 1), (3, 3), (1, 9), (9, 1), (5, 5)][case % 5];
        let x = uniform(&mut r, &[n, c, h, w], -1.0, 1.0);
        let k = uniform(&mut r, &[o, c, kh, kw], -1.0, 1.0);
        let b = uniform(&mut r, &[o], -1.0, 1.0);
        let want = naive_conv2d(&x, &k, Some(&b));
        let t = Tape::new();
        let got = t.constant(x.clone()).conv2d(t.constant(k.clone()), Some(t.constant(b.clone()))).unwrap().value();
        assert!(max_diff(&got, &want) < TOL, "case {case}");
        let t32 = Tape::<f32>::new();
        let got32 = t32.constant(x.cast()).conv2d(t32.constant(k.cast()), Some(t32.constant(b.cast()))).unwrap().value();
        assert!(max_diff32(&got32, &want) < 1e-4 * (c * kh * kw) as f64, "f32 case {case}");
    }
}

#[test]
fn conv2d_backward_matches_naive_on_large_inputs() {
    let mut r = rng(22);
    // 8 channels × 3×3 × 64×64 exceeds one sample's column budget.
    for o in [4, 40] {
        let x = uniform(&mut r, &[2, 8, 64, 64], -1.0, 1.0);
        let k = uniform(&mut r, &[o, 8, 3, 3], -1.0, 1.0);
        let weights = uniform(&mut r, &[2, o, 64, 64], -1.0, 1.0);
        let t = Tape::new();
        let (xv, kv) = (t.leaf(x.clone()), t.leaf(k.clone()));
        let out = xv.conv2d(kv, None).unwrap();
        assert!(max_diff(&out.value(), &naive_conv2d(&x, &k, None)) < TOL);
        let loss = out.mul(t.constant(weights.clone())).unwrap().sum().unwrap();
        t.backward(loss).unwrap();
        let (dx, dw) = naive_conv2d_grads(&x, &k, &weights);
        assert!(max_diff(&t.grad(xv).unwrap(), &dx) < TOL, "dx, {o} outputs");
        assert!(max_diff(&t.grad(kv).unwrap(), &dw) < TOL, "dw, {o} outputs");
    }
}

#[test]
fn depthwise_matches_naive() {
    let mut r = rng(23);
    for case in 0..20 {
        let (n, c) = (r.random_range(1..3), r.random_range(1..6));
        let (h, w) = (r.random_range(2..14), r.random_range(2..14));
        let (kh, kw) = [(3, 3), (1, 9), (9, 1), (5, 3)][case % 4];
        let x = uniform(&mut r, &[n, c, h, w], -1.0, 1.0);
        let k = uniform(&mut r, &[c, kh, kw], -1.0, 1.0);
        let t = Tape::new();
        let got = t.constant(x.clone()).depthwise_conv2d(t.constant(k.clone())).unwrap().value();
        assert!(max_diff(&got, &naive_depthwise(&x, &k)) < TOL, "case {case}");
    }
}

#[test]
fn maxpool_matches_naive() {
    let mut r = rng(24);
    for case in 0..20 {
        let shape = [r.random_range(1..3), r.random_range(1..5), 2 * r.random_range(1..9), 2 * r.random_range(1..9)];
        let x = uniform(&mut r, &shape, -1.0, 1.0);
        let t = Tape::new();
        let got = t.constant(x.clone()).maxpool2().unwrap().value();
        assert_eq!(max_diff(&got, &naive_maxpool2(&x)), 0.0, "case {case}");
        let t32 = Tape::<f32>::new();
        let got32 = t32.constant(x.cast()).maxpool2().unwrap().value();
        assert!(max_diff32(&got32, &naive_maxpool2(&x)) < TOL);
    }
}

#[test]
fn conv_transpose_matches_naive() {
    let mut r = rng(25);
    for case in 0..20 {
        let (n, c, o) = (r.random_range(1..3), r.random_range(1..7), r.random_range(1..7));
        let (h, w) = (r.random_range(1..9), r.random_range(1..9));
        let x = uniform(&mut r, &[n, c, h, w], -1.0, 1.0);
        let k = uniform(&mut r, &[c, o, 2, 2], -1.0, 1.0);
        let b = uniform(&mut r, &[o], -1.0, 1.0);
        let want = naive_conv_transpose2(&x, &k, Some(&b));
        let t = Tape::new();
        let got = t.constant(x.clone()).conv_transpose2(t.constant(k.clone()), Some(t.constant(b.clone()))).unwrap().value();
        assert!(max_diff(&got, &want) < TOL, "case {case}");
        let t32 = Tape::<f32>::new();
        let got32 = t32.constant(x.cast()).conv_transpose2(t32.constant(k.cast()), Some(t32.constant(b.cast()))).unwrap().value();
        assert!(max_diff32(&got32, &want) < TOL * 10.0, "f32 case {case}");
    }
}

#[test]
fn shape_errors_are_reported() {
    let t = Tape::new();
    let x = t.constant(Tensor::<f64>::zeros(&[1, 2, 4, 4]));
    assert!(x.conv2d(t.constant(Tensor::zeros(&[3, 5, 3, 3])), None).is_err());
    assert!(x.conv2d(t.constant(Tensor::zeros(&[3, 2, 2, 2])), None).is_err());
    assert!(x.depthwise_conv2d(t.constant(Tensor::zeros(&[3, 3, 3]))).is_err());
    assert!(t.constant(Tensor::<f64>::zeros(&[1, 1, 3, 4])).maxpool2().is_err());
}
