//! Synthetic weekly markets with known structure, used by tests, the
//! acceptance suite and the CLI's built-in datasets.

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{AssetSeries, Bar};

pub fn first_friday() -> NaiveDate {
    NaiveDate::from_ymd_opt(2008, 1, 4).expect("valid date")
}

fn week(k: usize) -> NaiveDate {
    first_friday() + chrono::Days::new(7 * k as u64)
}

/// Builds bars from per-period returns: open at the previous close, shadows
/// a fixed fraction outside the body.
pub fn series_from_returns(symbol: &str, start_price: f64, returns: &[f64]) -> AssetSeries {
    let mut bars = Vec::with_capacity(returns.len() + 1);
    let mut close = start_price;
    bars.push(Bar { date: week(0), open: close, high: close * 1.001, low: close * 0.999, close, volume: 1e6 });
    for (k, r) in returns.iter().enumerate() {
        let open = close;
        close = open * (1.0 + r);
        bars.push(Bar {
            date: week(k + 1),
            open,
            high: open.max(close) * 1.002,
            low: open.min(close) * 0.998,
            close,
            volume: 1e6 * (1.0 + 0.1 * (k % 3) as f64),
        });
    }
    AssetSeries::new(symbol, bars).expect("generated dates are unique")
}

/// Period-`k` return of the first alternating asset; the second is its negation.
pub fn alternating_return(k: usize, amplitude: f64) -> f64 {
    if k % 2 == 0 {
        amplitude
    } else {
        -amplitude
    }
}

/// Two risky assets whose returns alternate `+amplitude/-amplitude` out of phase.
pub fn alternating(weeks: usize, amplitude: f64) -> Vec<AssetSeries> {
    let a: Vec<f64> = (0..weeks).map(|k| alternating_return(k, amplitude)).collect();
    let b: Vec<f64> = a.iter().map(|r| -r).collect();
    vec![series_from_returns("ALT_A", 100.0, &a), series_from_returns("ALT_B", 100.0, &b)]
}

/// Parameters for the heavy-tailed vs low-variance pair.
#[derive(Debug, Clone, Copy)]
pub struct HeavyTailSpec {
    pub up: f64,
    pub crash: f64,
    pub crash_prob: f64,
    pub calm_mean: f64,
    pub calm_sd: f64,
}

impl Default for HeavyTailSpec {
    fn default() -> Self {
        HeavyTailSpec { up: 0.015, crash: -0.10, crash_prob: 0.05, calm_mean: 0.001, calm_sd: 0.002 }
    }
}

/// Asset `HEAVY` earns `up` except for rare `crash` periods; `CALM` is a
/// low-variance Gaussian. Returns are i.i.d. across periods.
pub fn heavy_tailed<R: Rng>(weeks: usize, spec: HeavyTailSpec, rng: &mut R) -> Vec<AssetSeries> {
    let calm = Normal::new(spec.calm_mean, spec.calm_sd).expect("sd > 0");
    let mut heavy = Vec::with_capacity(weeks);
    let mut low = Vec::with_capacity(weeks);
    for _ in 0..weeks {
        heavy.push(if rng.random::<f64>() < spec.crash_prob { spec.crash } else { spec.up });
        low.push(calm.sample(rng));
    }
    vec![series_from_returns("HEAVY", 100.0, &heavy), series_from_returns("CALM", 100.0, &low)]
}

/// Independent Gaussian random walks, for demos and smoke runs.
pub fn random_walks<R: Rng>(assets: usize, weeks: usize, rng: &mut R) -> Vec<AssetSeries> {
    (0..assets)
        .map(|i| {
            let drift = 0.001 + 0.0005 * i as f64;
            let dist = Normal::new(drift, 0.02 + 0.005 * i as f64).expect("sd > 0");
            let r: Vec<f64> = (0..weeks).map(|_| dist.sample(rng).max(-0.5)).collect();
            series_from_returns(&format!("RW{i}"), 50.0 + 10.0 * i as f64, &r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternating_is_out_of_phase() {
        let s = alternating(4, 0.02);
        let ca: Vec<f64> = s[0].closes().collect();
        let cb: Vec<f64> = s[1].closes().collect();
        assert!((ca[1] / ca[0] - 1.02).abs() < 1e-12);
        assert!((cb[1] / cb[0] - 0.98).abs() < 1e-12);
        assert!((ca[2] / ca[1] - 0.98).abs() < 1e-12);
        for b in s[0].bars() {
            b.validate().unwrap();
        }
    }
}
