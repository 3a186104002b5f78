//! Central finite-difference verification of analytic gradients (64-bit).

use super::{Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Outcome of [`finite_difference_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// `max |analytic − central| / max(1, |analytic|)` over smooth coordinates.
    pub max_rel_error: f64,
    /// Coordinates where the one-sided differences disagree (kinks); left out of the maximum.
    pub non_smooth: Vec<usize>,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares the tape gradient of scalar `f` at `x` with central differences of step `eps`.
pub fn finite_difference_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<FdReport>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let eval = |point: Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let y = f(tape.constant(point))?;
        y.item().ok_or_else(|| TensorError::NotScalar(y.shape()))
    };

    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let y = f(leaf)?;
    tape.backward(y)?;
    let analytic = tape.grad(leaf).unwrap_or_else(|| Tensor::zeros(x.shape()));
    let f0 = y.item().expect("backward checked the root is scalar");

    let mut report = FdReport { max_rel_error: 0.0, non_smooth: Vec::new() };
    for i in 0..x.len() {
        let shifted = |delta: f64| {
            let mut p = x.clone();
            p.data_mut()[i] += delta;
            p
        };
        let plus = eval(shifted(eps))?;
        let minus = eval(shifted(-eps))?;
        let central = (plus - minus) / (2.0 * eps);
        let forward = (plus - f0) / eps;
        let backward = (f0 - minus) / eps;
        if (forward - backward).abs() > 1e-3 * central.abs().max(1.0) {
            report.non_smooth.push(i);
            continue;
        }
        let a = analytic.data()[i];
        let err = (a - central).abs() / a.abs().max(1.0);
        report.max_rel_error = report.max_rel_error.max(err);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Tensor<f64> {
        Tensor::from_f64(&[5], &[-1.3, -0.2, 0.0, 0.7, 2.1]).unwrap()
    }

    #[test]
    fn sum_is_exact() {
        let r = finite_difference_check(|v| v.sum(), &x(), 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9);
        assert!(r.non_smooth.is_empty());
    }

    #[test]
    fn sigmoid_sum() {
        let r = finite_difference_check(|v| v.sigmoid()?.sum(), &x(), 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn clamp_boundary_is_flagged() {
        let p = Tensor::from_f64(&[3], &[0.5, 1.0, -0.4]).unwrap();
        let r = finite_difference_check(|v| v.clamp(-1.0, 1.0)?.sum(), &p, 1e-5).unwrap();
        assert_eq!(r.non_smooth, vec![1]);
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn non_scalar_function_rejected() {
        let err = finite_difference_check(|v| v.relu(), &x(), 1e-5).unwrap_err();
        assert_eq!(err, TensorError::NotScalar(vec![5]));
    }
}
