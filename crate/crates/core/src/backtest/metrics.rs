//! Performance metrics over an equity curve.

use serde::Serialize;

use super::EquityCurve;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Total return over the curve.
    pub tr: f64,
    /// Sample standard deviation of per-period returns.
    pub sd: f64,
    /// Sharpe ratio, per period. `NaN` when `sd` is zero.
    pub sr1: f64,
    /// Value at risk of per-period returns at the configured confidence.
    pub var: f64,
    /// Sortino ratio, per period. `NaN` when there is no downside.
    pub sr2: f64,
    /// Average turnover.
    pub at: f64,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 6] = ["TR", "SD", "SR1", "VaR", "SR2", "AT"];

    pub fn values(&self) -> [f64; 6] {
        [self.tr, self.sd, self.sr1, self.var, self.sr2, self.at]
    }
}

/// Empirical VaR: the negated `ceil(T (1 - alpha))`-th smallest return.
pub fn empirical_var(returns: &[f64], alpha: f64) -> f64 {
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((returns.len() as f64) * (1.0 - alpha)).ceil().max(1.0) as usize;
    -sorted[k.min(sorted.len()) - 1]
}

/// Computes the six metrics. `rf` is the per-period risk-free rate.
pub fn metrics(curve: &EquityCurve, rf: f64, alpha: f64) -> Result<MetricsReport> {
    let points = curve.points();
    if points.len() < 2 {
        return Err(Error::invalid("curve", "at least two points are required"));
    }
    let returns = curve.returns();
    let t = returns.len() as f64;
    let v0 = points[0].value;
    let tr = (points[points.len() - 1].value - v0) / v0;
    let mean = returns.iter().sum::<f64>() / t;
    let sd = if returns.len() > 1 {
        (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (t - 1.0)).sqrt()
    } else {
        0.0
    };
    let downside = (returns.iter().map(|r| (r - rf).min(0.0).powi(2)).sum::<f64>() / t).sqrt();
    let ratio = |d: f64| if d > 0.0 { (mean - rf) / d } else { f64::NAN };
    let turnover: f64 = points[1..].iter().map(|p| p.turnover).sum();
    Ok(MetricsReport {
        tr,
        sd,
        sr1: ratio(sd),
        var: empirical_var(&returns, alpha),
        sr2: ratio(downside),
        at: turnover / (2.0 * t),
    })
}
