use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::NaiveDate;

use super::features::window_features;
use super::patterns::{compute_patterns, PatternFlags};
use super::{AssetSeries, Bar, FeatureBlock};
use crate::error::{Error, Result};

/// Inclusive bar-index range of a train or test period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub first: usize,
    pub last: usize,
}

impl Split {
    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        self.last < self.first
    }
}

/// Date-aligned decision-frequency data for the whole portfolio.
///
/// The last asset is always the synthesized risk-free asset. Feature windows
/// are precomputed for every bar with a full history.
#[derive(Debug)]
pub struct MarketData {
    series: Vec<AssetSeries>,
    dates: Vec<NaiveDate>,
    returns: Vec<Vec<f64>>,
    features: Vec<Option<Arc<FeatureBlock>>>,
    window: usize,
    risk_free: f64,
}

impl MarketData {
    /// Inner-joins the risky series on common dates and appends a risk-free
    /// asset growing at `risk_free` per period.
    pub fn from_series(risky: Vec<AssetSeries>, risk_free: f64, window: usize) -> Result<Self> {
        if risky.is_empty() {
            return Err(Error::invalid("assets", "at least one risky asset is required"));
        }
        if window == 0 {
            return Err(Error::invalid("window", "window size must be >= 1"));
        }
        let mut common: BTreeSet<NaiveDate> = risky[0].bars().iter().map(|b| b.date).collect();
        for s in &risky[1..] {
            let dates: BTreeSet<NaiveDate> = s.bars().iter().map(|b| b.date).collect();
            common = common.intersection(&dates).copied().collect();
        }
        if common.len() < 2 {
            return Err(Error::EmptySeries);
        }
        let mut series = Vec::with_capacity(risky.len() + 1);
        for s in risky {
            let bars = s.bars().iter().filter(|b| common.contains(&b.date)).copied().collect();
            series.push(AssetSeries::new(s.symbol(), bars)?);
        }
        let dates: Vec<NaiveDate> = common.into_iter().collect();
        series.push(risk_free_series(&dates, risk_free)?);

        let returns = (0..dates.len())
            .map(|t| {
                series
                    .iter()
                    .map(|s| if t == 0 { 0.0 } else { s.bars()[t].close / s.bars()[t - 1].close - 1.0 })
                    .collect()
            })
            .collect();

        let flags: Vec<Vec<PatternFlags>> = series.iter().map(compute_patterns).collect();
        let views: Vec<(&[Bar], &[PatternFlags])> =
            series.iter().zip(&flags).map(|(s, f)| (s.bars(), f.as_slice())).collect();
        let features = (0..dates.len())
            .map(|t| if t + 1 >= window { window_features(&views, t, window).ok().map(Arc::new) } else { None })
            .collect();

        Ok(MarketData { series, dates, returns, features, window, risk_free })
    }

    pub fn assets(&self) -> usize {
        self.series.len()
    }

    pub fn risk_free_index(&self) -> usize {
        self.series.len() - 1
    }

    pub fn risk_free(&self) -> f64 {
        self.risk_free
    }

    pub fn symbols(&self) -> Vec<&str> {
        self.series.iter().map(|s| s.symbol()).collect()
    }

    pub fn series(&self) -> &[AssetSeries] {
        &self.series
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    /// Per-asset simple returns realized over period `t` (from bar `t-1` to `t`).
    pub fn returns_at(&self, t: usize) -> &[f64] {
        &self.returns[t]
    }

    pub fn closes_at(&self, t: usize) -> Vec<f64> {
        self.series.iter().map(|s| s.bars()[t].close).collect()
    }

    pub fn features_at(&self, t: usize) -> Result<Arc<FeatureBlock>> {
        self.features.get(t).and_then(|f| f.clone()).ok_or(Error::InsufficientHistory {
            needed: self.window,
            index: t,
            available: (t + 1).min(self.len()),
        })
    }

    /// Bars in `[start, end]` usable as decision points (full feature window available).
    pub fn split(&self, start: NaiveDate, end: NaiveDate) -> Result<Split> {
        let first = self.dates.iter().position(|d| *d >= start).map(|i| i.max(self.window - 1));
        let last = self.dates.iter().rposition(|d| *d <= end);
        match (first, last) {
            (Some(first), Some(last)) if first < last => Ok(Split { first, last }),
            _ => Err(Error::InsufficientHistory { needed: self.window + 1, index: 0, available: self.len() }),
        }
    }

    /// The whole usable range.
    pub fn full_split(&self) -> Split {
        Split { first: self.window - 1, last: self.len() - 1 }
    }
}

fn risk_free_series(dates: &[NaiveDate], rate: f64) -> Result<AssetSeries> {
    let mut close = 1.0;
    let mut bars = Vec::with_capacity(dates.len());
    for &date in dates {
        let open = close;
        close = open * (1.0 + rate);
        let (lo, hi) = (open.min(close), open.max(close));
        bars.push(Bar::new(date, open, hi, lo, close, 0.0)?);
    }
    AssetSeries::new("RISK_FREE", bars)
}
