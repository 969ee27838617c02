//! Quantile-distribution math for the critic: Bellman targets, the
//! quantile-Huber loss and the mean / VaR / utility functionals.
//!
//! Quantile `i` (1-based) of `N` estimates the `(2i - 1) / 2N` quantile of the
//! return distribution. VaR at confidence `alpha` reads atom `N (1 - alpha)`,
//! which must be a positive integer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INDEX_EPS: f64 = 1e-9;

/// `N` quantile estimates of a return distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileVector(pub Vec<f64>);

impl QuantileVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::invalid("theta", "at least one quantile is required"));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta", "non-finite quantile"));
        }
        Ok(QuantileVector(theta))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Midpoint quantile level of atom `i` (0-based) out of `n`.
pub fn tau_hat(i: usize, n: usize) -> f64 {
    (2 * i + 1) as f64 / (2 * n) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub alpha: f64,
    pub zeta: f64,
    pub kappa: f64,
    pub gamma: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig { alpha: 0.95, zeta: 0.5, kappa: 1.0, gamma: 0.9 }
    }
}

impl RiskConfig {
    /// Checks ranges and returns the 1-based VaR atom index for `n` quantiles.
    pub fn validate(&self, n: usize) -> Result<usize> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha", format!("must be in (0, 1), got {}", self.alpha)));
        }
        if !(self.zeta >= 0.0) {
            return Err(Error::invalid("zeta", format!("must be >= 0, got {}", self.zeta)));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::invalid("kappa", format!("must be > 0, got {}", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma", format!("must be in [0, 1], got {}", self.gamma)));
        }
        var_index(n, self.alpha)
    }
}

/// 1-based atom index `N (1 - alpha)`.
pub fn var_index(n: usize, alpha: f64) -> Result<usize> {
    let raw = n as f64 * (1.0 - alpha);
    let k = raw.round();
    if (raw - k).abs() > INDEX_EPS || k < 1.0 || k > n as f64 {
        return Err(Error::invalid(
            "alpha",
            format!("N * (1 - alpha) = {raw} is not a positive integer index for N = {n}"),
        ));
    }
    Ok(k as usize)
}

/// `r + gamma * theta'_j` for every atom. The target is a constant: nothing flows back into `theta_next`.
pub fn bellman_target(r: f64, gamma: f64, theta_next: &[f64]) -> Vec<f64> {
    theta_next.iter().map(|t| r + gamma * t).collect()
}

fn huber(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        0.5 * u * u
    } else {
        kappa * (u.abs() - 0.5 * kappa)
    }
}

fn huber_slope(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        u
    } else {
        kappa * u.signum()
    }
}

/// `(1/N') sum_i sum_j |tau_i - 1{u < 0}| * huber_kappa(u)` with `u = target_j - theta_i`.
///
/// For equal lengths this is the usual `1/N` normalization. Assumes `kappa > 0`.
pub(crate) fn quantile_huber_loss_unchecked(theta: &[f64], target: &[f64], kappa: f64) -> f64 {
    let n = theta.len();
    let mut total = 0.0;
    for (i, th) in theta.iter().enumerate() {
        let tau = tau_hat(i, n);
        for t in target {
            let u = t - th;
            let w = if u < 0.0 { 1.0 - tau } else { tau };
            total += w * huber(u, kappa);
        }
    }
    total / target.len() as f64
}

/// Gradient of [`quantile_huber_loss`] with respect to `theta`.
pub fn quantile_huber_grad(theta: &[f64], target: &[f64], kappa: f64) -> Vec<f64> {
    let n = theta.len();
    let scale = 1.0 / target.len() as f64;
    theta
        .iter()
        .enumerate()
        .map(|(i, th)| {
            let tau = tau_hat(i, n);
            let s: f64 = target
                .iter()
                .map(|t| {
                    let u = t - th;
                    let w = if u < 0.0 { 1.0 - tau } else { tau };
                    -w * huber_slope(u, kappa)
                })
                .sum();
            s * scale
        })
        .collect()
}

pub fn quantile_huber_loss(theta: &[f64], target: &[f64], kappa: f64) -> f64 {
    assert!(kappa > 0.0, "kappa must be positive");
    quantile_huber_loss_unchecked(theta, target, kappa)
}

/// Checked variant for callers that take `kappa` from user input.
pub fn try_quantile_huber_loss(theta: &QuantileVector, target: &QuantileVector, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::invalid("kappa", format!("must be > 0, got {kappa}")));
    }
    if theta.len() != target.len() {
        return Err(Error::Shape(format!("{} quantiles vs {} targets", theta.len(), target.len())));
    }
    Ok(quantile_huber_loss_unchecked(&theta.0, &target.0, kappa))
}

pub fn mean_return(theta: &[f64]) -> f64 {
    theta.iter().sum::<f64>() / theta.len() as f64
}

/// `-theta_{N (1 - alpha)}` (1-based).
pub fn var_alpha(theta: &[f64], alpha: f64) -> Result<f64> {
    let k = var_index(theta.len(), alpha)?;
    Ok(-theta[k - 1])
}

/// `MR - zeta * VaR = mean(theta) + zeta * theta_k`.
pub fn utility(theta: &[f64], cfg: &RiskConfig) -> Result<f64> {
    Ok(mean_return(theta) - cfg.zeta * var_alpha(theta, cfg.alpha)?)
}

/// Gradient of [`utility`] with respect to `theta`; the utility is linear so
/// this is also its coefficient vector.
pub fn utility_coefficients(n: usize, cfg: &RiskConfig) -> Result<Vec<f64>> {
    let k = var_index(n, cfg.alpha)?;
    let mut c = vec![1.0 / n as f64; n];
    c[k - 1] += cfg.zeta;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bellman_target_cases() {
        assert_eq!(bellman_target(0.3, 0.0, &[1.0, 5.0]), vec![0.3, 0.3]);
        assert_eq!(bellman_target(0.0, 1.0, &[1.0, 5.0]), vec![1.0, 5.0]);
        let t = bellman_target(1.0, 0.9, &[0.0, 1.0, 2.0]);
        for (a, b) in t.iter().zip([1.0, 1.9, 2.8]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_zero_residual() {
        assert_eq!(quantile_huber_loss(&[0.7], &[0.7], 1.0), 0.0);
    }

    #[test]
    fn loss_quadratic_branch() {
        // N=1 so tau = 0.5; u = 0.5
        assert!((quantile_huber_loss(&[0.0], &[0.5], 1.0) - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn loss_two_atoms_by_hand() {
        // theta=(0,0), target=(1,1), kappa=1: every u=1 (quadratic edge, 0.5)
        // atom 1: tau=0.25 -> 2 * 0.25 * 0.5; atom 2: tau=0.75 -> 2 * 0.75 * 0.5; divided by N=2
        let l = quantile_huber_loss(&[0.0, 0.0], &[1.0, 1.0], 1.0);
        assert!((l - 0.5).abs() < 1e-15);
    }

    #[test]
    fn loss_linear_branch() {
        // u = 3 > kappa = 1: huber = 1 * (3 - 0.5) = 2.5, tau = 0.5
        assert!((quantile_huber_loss(&[0.0], &[3.0], 1.0) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn checked_loss_rejects_bad_kappa() {
        let q = QuantileVector::new(vec![0.0]).unwrap();
        assert!(try_quantile_huber_loss(&q, &q, 0.0).is_err());
        assert!(try_quantile_huber_loss(&q, &q, -1.0).is_err());
    }

    #[test]
    fn mean_cases() {
        assert_eq!(mean_return(&[2.5; 7]), 2.5);
        assert_eq!(mean_return(&[1.0, 2.0, 3.0]), 2.0);
    }

    #[test]
    fn var_worked_examples() {
        let theta: Vec<f64> = (1..=200).map(|i| i as f64 * 0.01).collect();
        assert_eq!(var_alpha(&theta[..100], 0.95).unwrap(), -theta[4]);
        assert_eq!(var_alpha(&theta, 0.90).unwrap(), -theta[19]);
        assert_eq!(var_alpha(&[3.0; 20], 0.95).unwrap(), -3.0);
    }

    #[test]
    fn var_index_must_be_integer() {
        assert!(var_index(117, 0.95).is_err());
        assert!(var_index(10, 0.99).is_err());
        assert_eq!(var_index(32, 0.9375).unwrap(), 2);
    }

    #[test]
    fn utility_cases() {
        let cfg = RiskConfig { zeta: 0.0, ..Default::default() };
        let theta: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(utility(&theta, &cfg).unwrap(), mean_return(&theta));
        let cfg = RiskConfig { zeta: 0.7, ..Default::default() };
        assert!((utility(&[2.0; 20], &cfg).unwrap() - (2.0 + 0.7 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn utility_on_ramp() {
        // independent arithmetic: ramp i/(N-1), mean 0.5, theta_10 = 9/199
        let n = 200;
        let theta: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let cfg = RiskConfig { alpha: 0.95, zeta: 0.5, ..Default::default() };
        let expected = 0.5 + 0.5 * (9.0 / 199.0);
        assert!((utility(&theta, &cfg).unwrap() - expected).abs() < 1e-14);
        let c = utility_coefficients(n, &cfg).unwrap();
        assert!((c[9] - (0.005 + 0.5)).abs() < 1e-15);
        assert!((c[0] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn risk_config_validation() {
        assert_eq!(RiskConfig::default().validate(200).unwrap(), 10);
        assert!(RiskConfig { gamma: 1.5, ..Default::default() }.validate(200).is_err());
        assert!(RiskConfig { kappa: 0.0, ..Default::default() }.validate(200).is_err());
        assert!(RiskConfig::default().validate(117).is_err());
    }

    #[test]
    fn quantile_regression_recovers_three_atom_quantiles() {
        // targets: atoms 0, 1, 2 with probabilities 0.2, 0.5, 0.3 (as 10 weighted samples)
        let samples = [0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0];
        let n = 8;
        let mut theta = vec![0.5; n];
        let kappa = 1e-4;
        for step in 0..20_000 {
            let lr = 0.02 / (1.0 + step as f64 / 1000.0);
            let g = quantile_huber_grad(&theta, &samples, kappa);
            for (t, gi) in theta.iter_mut().zip(&g) {
                // dividing by kappa recovers the unit-scale pinball subgradient
                *t -= lr * gi / kappa;
            }
        }
        for (i, t) in theta.iter().enumerate() {
            let tau = tau_hat(i, n);
            let exact = if tau < 0.2 { 0.0 } else if tau < 0.7 { 1.0 } else { 2.0 };
            assert!((t - exact).abs() < 0.02, "atom {i} tau {tau}: {t} vs {exact}");
        }
    }

    proptest! {
        #[test]
        fn loss_nonnegative(theta in proptest::collection::vec(-3.0f64..3.0, 1..8), shift in -2.0f64..2.0, kappa in 0.1f64..2.0) {
            let target: Vec<f64> = theta.iter().rev().map(|t| t + shift).collect();
            prop_assert!(quantile_huber_loss(&theta, &target, kappa) >= 0.0);
        }

        #[test]
        fn single_atom_asymmetry(u in 0.01f64..0.9) {
            // N=1 has tau = 0.5 so the ratio is 1; N=2 atom 0 has tau 0.25 -> ratio 1/3
            let pos = quantile_huber_loss(&[0.0], &[u], 1.0);
            let neg = quantile_huber_loss(&[0.0], &[-u], 1.0);
            prop_assert!((pos / neg - 1.0).abs() < 1e-12);
            let n = 2;
            let tau = tau_hat(0, n);
            let lp = tau * 0.5 * u * u;
            let ln = (1.0 - tau) * 0.5 * u * u;
            prop_assert!((lp / ln - tau / (1.0 - tau)).abs() < 1e-12);
        }

        #[test]
        fn gradient_matches_finite_differences(
            theta in proptest::collection::vec(-2.0f64..2.0, 1..8),
            target in proptest::collection::vec(-2.0f64..2.0, 1..8),
            kappa in 0.2f64..1.5,
        ) {
            let g = quantile_huber_grad(&theta, &target, kappa);
            let h = 1e-6;
            for i in 0..theta.len() {
                // skip atoms sitting on a kink
                if target.iter().any(|t| ((t - theta[i]).abs() - kappa).abs() < 1e-4 || (t - theta[i]).abs() < 1e-4) {
                    continue;
                }
                let mut p = theta.clone();
                p[i] += h;
                let mut m = theta.clone();
                m[i] -= h;
                let fd = (quantile_huber_loss(&p, &target, kappa) - quantile_huber_loss(&m, &target, kappa)) / (2.0 * h);
                prop_assert!((g[i] - fd).abs() < 1e-6 * g[i].abs().max(1.0), "atom {}: {} vs {}", i, g[i], fd);
            }
        }
    }
}
