//! Optimizer updates against hand-stepped references and schedule invariants.

use laneforge::optim::{lr_decay, radam_rectifier, OptimConfig, OptimKind, Optimizer};
use laneforge::tensor::Tensor;
use proptest::prelude::*;

fn t(v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(&[v.len()], v).unwrap()
}

/// Scalar reference of one optimizer over a gradient sequence.
fn reference(cfg: OptimConfig, p0: f64, grads: &[f64]) -> f64 {
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for (i, &g) in grads.iter().enumerate() {
        let step = i as i32 + 1;
        match cfg.kind {
            OptimKind::Sgd => {
                m = cfg.momentum * m + g;
                p -= cfg.lr * m;
            }
            OptimKind::Adam | OptimKind::Radam => {
                m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
                v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
                let m_hat = m / (1.0 - cfg.beta1.powi(step));
                let v_hat = v / (1.0 - cfg.beta2.powi(step));
                let rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0;
                let rho = rho_inf - 2.0 * step as f64 * cfg.beta2.powi(step) / (1.0 - cfg.beta2.powi(step));
                p -= match cfg.kind {
                    OptimKind::Adam => cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps),
                    _ if rho > 4.0 => {
                        let r = ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt();
                        cfg.lr * r * m_hat / (v_hat.sqrt() + cfg.eps)
                    }
                    _ => cfg.lr * m_hat,
                };
            }
        }
    }
    p
}

#[test]
fn steps_match_scalar_reference() {
    let grads: Vec<f64> = (0..30).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
    for kind in [OptimKind::Sgd, OptimKind::Adam, OptimKind::Radam] {
        let cfg = OptimConfig { kind, lr: 0.01, ..OptimConfig::default() };
        let mut opt = Optimizer::<f64>::new(cfg).unwrap();
        let mut params = vec![t(&[0.5, -1.0])];
        for &g in &grads {
            opt.step(&mut params, &[t(&[g, -g])]).unwrap();
        }
        let want = [reference(cfg, 0.5, &grads), reference(cfg, -1.0, &grads.iter().map(|g| -g).collect::<Vec<_>>())];
        for (got, want) in params[0].to_f64_vec().iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{kind:?}: {got} vs {want}");
        }
        assert_eq!(opt.steps(), 30);
    }
}

#[test]
fn rectifier_warms_up_then_tends_to_one() {
    let first_rectified = (1..100).find(|&t| radam_rectifier(t, 0.999).1.is_some()).unwrap();
    assert_eq!(first_rectified, 5);
    assert!((radam_rectifier(1_000_000, 0.999).1.unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn mismatched_updates_fail() {
    let mut opt = Optimizer::<f64>::new(OptimConfig::default()).unwrap();
    let mut params = vec![t(&[1.0, 2.0])];
    assert!(opt.step(&mut params, &[]).is_err());
    assert!(opt.step(&mut params, &[t(&[1.0])]).is_err());
    assert!(Optimizer::<f64>::new(OptimConfig { decay: 0.0, ..OptimConfig::default() }).is_err());
    assert!(Optimizer::<f64>::new(OptimConfig { lr: f64::NAN, ..OptimConfig::default() }).is_err());
}

proptest! {
    #[test]
    fn decay_is_geometric(lr in 1e-5f64..1.0, d in 0.5f64..=1.0, e in 0usize..200) {
        let a = lr_decay(lr, d, e).unwrap();
        prop_assert!((a - lr * d.powi(e as i32)).abs() <= 1e-12 * lr);
        prop_assert!(lr_decay(lr, d, e + 1).unwrap() <= a);
    }

    #[test]
    fn zero_gradient_keeps_adaptive_params(p in -10.0f64..10.0, steps in 1usize..20) {
        for kind in [OptimKind::Adam, OptimKind::Radam] {
            let mut opt = Optimizer::<f64>::new(OptimConfig { kind, ..OptimConfig::default() }).unwrap();
            let mut params = vec![t(&[p])];
            for _ in 0..steps {
                opt.step(&mut params, &[t(&[0.0])]).unwrap();
            }
            prop_assert_eq!(params[0].to_f64_vec()[0], p);
        }
    }
}
