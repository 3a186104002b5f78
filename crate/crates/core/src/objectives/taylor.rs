//! Polynomial expansion of focal loss in powers of `(1 − Q)`.

use super::{LossError, Result};

/// `Σ_{j=1..N} (γ_j + 1/j)(1−Q)^{j+ε}`; `gammas` shorter than `n` are zero-padded.
///
/// With all `γ_j = 0` this is the `N`-term truncation of `−(1−Q)^ε ln Q`.
pub fn fl_taylor_truncated(q: f64, epsilon: f64, n: usize, gammas: &[f64]) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(LossError::OutOfRange(q));
    }
    if n == 0 {
        return Err(LossError::InvalidConfig("series needs at least one term".into()));
    }
    if gammas.len() > n {
        return Err(LossError::InvalidConfig(format!("{} perturbations for {n} terms", gammas.len())));
    }
    let base = 1.0 - q;
    Ok((1..=n)
        .map(|j| {
            let g = gammas.get(j - 1).copied().unwrap_or(0.0);
            (g + 1.0 / j as f64) * base.powf(j as f64 + epsilon)
        })
        .sum())
}

/// Closed form of the series with only the leading coefficient perturbed:
/// `−α(1−Q)^ε ln Q + γ(1−Q)^{ε+1}`.
pub fn poly1_closed_form(q: f64, alpha: f64, gamma: f64, epsilon: f64) -> f64 {
    let base = 1.0 - q;
    -alpha * base.powf(epsilon) * q.ln() + gamma * base.powf(epsilon + 1.0)
}

/// Upper bound on `|truncation − (−ln Q)|` for `ε = 0`: `(1−Q)^{N+1} / ((N+1) Q)`.
pub fn taylor_remainder_bound(q: f64, n: usize) -> f64 {
    (1.0 - q).powi(n as i32 + 1) / ((n as f64 + 1.0) * q)
}
