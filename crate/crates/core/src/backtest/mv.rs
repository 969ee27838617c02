//! Closed-form mean-variance allocation with a budget constraint.

use nalgebra::{DMatrix, DVector};

use crate::action::WeightVector;
use crate::error::{Error, Result};

/// Diagonal loading relative to the mean variance.
pub const RIDGE: f64 = 1e-6;

/// Sample mean and covariance (`n - 1` denominator) of a `[period][asset]` window.
pub fn mean_and_covariance(history: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let t = history.len();
    if t < 2 {
        return Err(Error::invalid("history", "need at least two periods"));
    }
    let n = history[0].len();
    let mut mean = vec![0.0; n];
    for row in history {
        if row.len() != n {
            return Err(Error::Shape("ragged return history".into()));
        }
        mean.iter_mut().zip(row).for_each(|(m, r)| *m += r / t as f64);
    }
    let mut cov = vec![vec![0.0; n]; n];
    for row in history {
        for i in 0..n {
            for j in 0..n {
                cov[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]) / (t - 1) as f64;
            }
        }
    }
    Ok((mean, cov))
}

/// Maximizes `W'R - zeta W' S W` subject to `1'W = 1`:
/// `W = S^-1 (R - lambda 1) / (2 zeta)`, `lambda = (1' S^-1 R - 2 zeta) / (1' S^-1 1)`.
/// `cov` gets `RIDGE` times its mean variance added to the diagonal.
pub fn mean_variance_weights(mean: &[f64], cov: &[Vec<f64>], zeta: f64) -> Result<WeightVector> {
    let n = mean.len();
    if !(zeta > 0.0) {
        return Err(Error::invalid("zeta", format!("mean-variance needs zeta > 0, got {zeta}")));
    }
    if cov.len() != n || cov.iter().any(|r| r.len() != n) {
        return Err(Error::Shape(format!("covariance is not {n}x{n}")));
    }
    let scale = ((0..n).map(|i| cov[i][i]).sum::<f64>() / n as f64).max(f64::MIN_POSITIVE);
    let ridge = RIDGE * scale;
    let s = DMatrix::from_fn(n, n, |i, j| cov[i][j] + if i == j { ridge } else { 0.0 });
    let lu = s.lu();
    let r = DVector::from_column_slice(mean);
    let ones = DVector::from_element(n, 1.0);
    let sr = lu.solve(&r).ok_or(Error::SingularCovariance)?;
    let s1 = lu.solve(&ones).ok_or(Error::SingularCovariance)?;
    let denom = s1.sum();
    if !denom.is_finite() || denom.abs() < f64::EPSILON {
        return Err(Error::SingularCovariance);
    }
    let lambda = (sr.sum() - 2.0 * zeta) / denom;
    let w: Vec<f64> = (0..n).map(|i| (sr[i] - lambda * s1[i]) / (2.0 * zeta)).collect();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    // the budget holds analytically; renormalize away the solver's rounding
    let sum: f64 = w.iter().sum();
    let w = w.iter().map(|v| v - (sum - 1.0) / n as f64).collect();
    WeightVector::new(w)
}
