//! Least-squares polynomial fit `x = f(y)` of a lane instance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

pub const MAX_DEGREE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    /// `[c3, c2, c1, c0]` with `x = c3·y³ + c2·y² + c1·y + c0`.
    pub coeffs: [f64; 4],
    pub degree: usize,
    pub rms: f64,
}

impl CurveFit {
    pub fn eval(&self, y: f64) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, &c| acc * y + c)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Fits `(row, col)` pixels with degree `min(3, distinct rows − 1)`, lowered
/// further when the design matrix is rank deficient.
pub fn fit_curve(points: &[(f64, f64)]) -> Result<CurveFit> {
    if points.is_empty() {
        return Err(EvalError::Invalid("no points to fit".into()));
    }
    let mut rows: Vec<f64> = points.iter().map(|p| p.0).collect();
    rows.sort_by(f64::total_cmp);
    rows.dedup();
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.0).sum::<f64>() / n;
    let spread = points.iter().map(|p| (p.0 - mean).abs()).fold(0.0, f64::max).max(1.0);
    let ts: Vec<f64> = points.iter().map(|p| (p.0 - mean) / spread).collect();
    let xs = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));

    let mut degree = MAX_DEGREE.min(rows.len() - 1);
    let b = loop {
        let a = DMatrix::from_fn(points.len(), degree + 1, |i, j| ts[i].powi(j as i32));
        let qr = a.qr();
        let r = qr.r();
        let scale = (0..=degree).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
        let full_rank = (0..=degree).all(|j| r[(j, j)].abs() > 1e-10 * scale.max(1e-300));
        if full_rank {
            let qtb = qr.q().transpose() * &xs;
            break r.solve_upper_triangular(&qtb).expect("full rank");
        }
        if degree == 0 {
            return Err(EvalError::Invalid("degenerate fit".into()));
        }
        degree -= 1;
    };

    // x = Σ b_k ((y − m)/s)^k expanded in powers of y.
    let mut power = [0f64; 4];
    for (k, &bk) in b.iter().enumerate() {
        let sk = spread.powi(k as i32);
        for j in 0..=k {
            power[j] += bk * binomial(k, j) * (-mean).powi((k - j) as i32) / sk;
        }
    }
    let coeffs = [power[3], power[2], power[1], power[0]];
    let fit = CurveFit { coeffs, degree, rms: 0.0 };
    let sse: f64 = points.iter().map(|&(y, x)| (fit.eval(y) - x).powi(2)).sum();
    Ok(CurveFit { rms: (sse / n).sqrt(), ..fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let pts: Vec<_> = (0..20).map(|y| (y as f64, 2.0 * y as f64 + 1.0)).collect();
        let f = fit_curve(&pts).unwrap();
        assert_eq!(f.degree, 3);
        for (got, want) in f.coeffs.iter().zip([0.0, 0.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-9, "{:?}", f.coeffs);
        }
        assert!(f.rms < 1e-9);
    }

    #[test]
    fn single_row_is_constant() {
        let f = fit_curve(&[(5.0, 1.0), (5.0, 3.0)]).unwrap();
        assert_eq!(f.degree, 0);
        assert!((f.eval(5.0) - 2.0).abs() < 1e-12);
        assert!((f.rms - 1.0).abs() < 1e-12);
    }
}
