//! Loss values against per-pixel loop oracles and the exact reductions between the losses.

mod support;

use laneforge::autograd::Tape;
use laneforge::objectives::{class_weights, focal_loss, poly_loss, weighted_ce, LossConfig};
use laneforge::tensor::Tensor;
use proptest::prelude::*;
use support::{binary, rng, uniform};

fn value(f: impl for<'t> Fn(&'t Tape<f64>) -> f64) -> f64 {
    let tape = Tape::new();
    f(&tape)
}

fn ce_of(p: &Tensor<f64>, y: &Tensor<f64>, cfg: &LossConfig) -> f64 {
    value(|t| weighted_ce(t.constant(p.clone()), t.constant(y.clone()), cfg).unwrap().item().unwrap())
}

fn pl_of(p: &Tensor<f64>, y: &Tensor<f64>, cfg: &LossConfig) -> f64 {
    value(|t| poly_loss(t.constant(p.clone()), t.constant(y.clone()), cfg).unwrap().item().unwrap())
}

fn fl_of(p: &Tensor<f64>, y: &Tensor<f64>, alpha: f64, eps: f64) -> f64 {
    value(|t| focal_loss(t.constant(p.clone()), t.constant(y.clone()), alpha, eps).unwrap().item().unwrap())
}

/// Per-pixel oracle of the customized PolyLoss with `Q` the probability of the true class.
fn poly_oracle(p: &[f64], y: &[f64], a: f64, g: f64, e: f64) -> f64 {
    let mut s = 0.0;
    for (&h, &t) in p.iter().zip(y) {
        let q = if t > 0.5 { h } else { 1.0 - h };
        s += -a * (1.0 - q).powf(e) * q.ln() + g * (1.0 - q).powf(e + 1.0);
    }
    s / p.len() as f64
}

fn ce_oracle(p: &[f64], y: &[f64], w1: f64, w0: f64) -> f64 {
    let mut s = 0.0;
    for (&h, &t) in p.iter().zip(y) {
        s -= w1 * t * h.ln() + w0 * (1.0 - t) * (1.0 - h).ln();
    }
    s / p.len() as f64
}

fn batch(seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    let shape = [2, 1, 6, 8];
    (uniform(&mut r, &shape, 1e-3, 1.0 - 1e-3), binary(&mut r, &shape, 0.2))
}

#[test]
fn poly_and_focal_reduce_to_cross_entropy() {
    let unweighted = LossConfig::default();
    let reduced = LossConfig { alpha: 1.0, gamma: 0.0, epsilon: 0.0, ..LossConfig::default() };
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (p, y) = batch(seed);
        let ce = ce_of(&p, &y, &unweighted);
        worst = worst.max((pl_of(&p, &y, &reduced) - ce).abs());
        worst = worst.max((fl_of(&p, &y, 1.0, 0.0) - ce).abs());
    }
    assert!(worst < 1e-12, "{worst:e}");
}

#[test]
fn losses_match_pixel_loops() {
    for seed in 0..50 {
        let (p, y) = batch(seed + 1000);
        let (pd, yd) = (p.to_f64_vec(), y.to_f64_vec());
        let cfg = LossConfig { alpha: 1.5, gamma: 0.7, epsilon: 2.0, omega1: 9.0, omega0: 0.6, ..LossConfig::default() };
        assert!((pl_of(&p, &y, &cfg) - poly_oracle(&pd, &yd, 1.5, 0.7, 2.0)).abs() < 1e-12);
        assert!((ce_of(&p, &y, &cfg) - ce_oracle(&pd, &yd, 9.0, 0.6)).abs() < 1e-12);
        assert!((fl_of(&p, &y, 1.0, 2.0) - poly_oracle(&pd, &yd, 1.0, 0.0, 2.0)).abs() < 1e-12);
    }
}

#[test]
fn bad_configs_are_rejected() {
    let (p, y) = batch(1);
    let t = Tape::new();
    let bad = LossConfig { alpha: -1.0, ..LossConfig::default() };
    assert!(poly_loss(t.constant(p.clone()), t.constant(y.clone()), &bad).is_err());
    let bad = LossConfig { omega1: 0.0, ..LossConfig::default() };
    assert!(weighted_ce(t.constant(p.clone()), t.constant(y.clone()), &bad).is_err());
    let short = Tensor::<f64>::zeros(&[2, 1, 6, 7]);
    assert!(poly_loss(t.constant(p), t.constant(short), &LossConfig::default()).is_err());
    assert!(class_weights(0, 10).is_err());
    assert!(class_weights(10, 10).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn epsilon_zero_poly_is_ce_plus_linear_term(seed in 0u64..10_000, a in 0.1f64..3.0, g in 0.0f64..3.0) {
        let (p, y) = batch(seed);
        let cfg = LossConfig { alpha: a, gamma: g, epsilon: 0.0, ..LossConfig::default() };
        let mean_one_minus_q = poly_oracle(&p.to_f64_vec(), &y.to_f64_vec(), 0.0, 1.0, 0.0);
        let want = a * ce_of(&p, &y, &LossConfig::default()) + g * mean_one_minus_q;
        prop_assert!((pl_of(&p, &y, &cfg) - want).abs() < 1e-12);
    }

    #[test]
    fn losses_are_nonnegative(seed in 0u64..10_000, e in 0.0f64..3.0) {
        let (p, y) = batch(seed);
        let cfg = LossConfig { epsilon: e, ..LossConfig::default() };
        prop_assert!(pl_of(&p, &y, &cfg) >= 0.0);
        prop_assert!(ce_of(&p, &y, &cfg) >= 0.0);
    }

    #[test]
    fn class_weights_average_to_one(lane in 1u64..10_000, extra in 1u64..1_000_000) {
        let total = lane + extra;
        let (w1, w0) = class_weights(lane, total).unwrap();
        let p = lane as f64 / total as f64;
        prop_assert!((p * w1 + (1.0 - p) * w0 - 1.0).abs() < 1e-12);
        prop_assert!((w1 * lane as f64 - w0 * extra as f64).abs() <= 1e-9 * w1 * lane as f64);
    }
}
