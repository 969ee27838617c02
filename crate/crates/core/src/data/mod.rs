//! Market data: OHLCV bars, CSV ingest, weekly resampling, candlestick
//! indicators and state assembly.

mod features;
mod market;
mod patterns;
pub mod synthetic;

use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{build_features, build_state, FeatureBlock, State, NUM_FEATURES, NUM_RAW};
pub use market::{MarketData, Split};
pub use patterns::{compute_patterns, Pattern, PatternFlags, NUM_PATTERNS};

pub const CSV_HEADER: [&str; 6] = ["date", "open", "high", "low", "close", "volume"];

/// One OHLCV bar. Construct through [`Bar::new`] to get invariant checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    pub fn new(date: NaiveDate, open: f64, high: f64, low: f64, close: f64, volume: f64) -> Result<Self> {
        let bar = Bar { date, open, high, low, close, volume };
        bar.validate()?;
        Ok(bar)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |invariant| Err(Error::BarInvariant { date: self.date, invariant });
        let vals = [self.open, self.high, self.low, self.close, self.volume];
        if vals.iter().any(|v| !v.is_finite()) {
            return fail("all fields finite");
        }
        if self.close <= 0.0 {
            return fail("close > 0");
        }
        if self.low > self.high {
            return fail("low <= high");
        }
        if self.low > self.open.min(self.close) {
            return fail("low <= min(open, close)");
        }
        if self.high < self.open.max(self.close) {
            return fail("high >= max(open, close)");
        }
        if self.volume < 0.0 {
            return fail("volume >= 0");
        }
        Ok(())
    }

    pub fn body(&self) -> f64 {
        (self.close - self.open).abs()
    }

    pub fn range(&self) -> f64 {
        self.high - self.low
    }

    pub fn upper_shadow(&self) -> f64 {
        self.high - self.open.max(self.close)
    }

    pub fn lower_shadow(&self) -> f64 {
        self.open.min(self.close) - self.low
    }

    pub fn body_mid(&self) -> f64 {
        0.5 * (self.open + self.close)
    }

    pub fn is_bullish(&self) -> bool {
        self.close > self.open
    }

    pub fn is_bearish(&self) -> bool {
        self.close < self.open
    }
}

/// A chronologically ordered OHLCV series for one instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetSeries {
    symbol: String,
    bars: Vec<Bar>,
}

impl AssetSeries {
    /// Sorts by date and rejects duplicates.
    pub fn new(symbol: impl Into<String>, mut bars: Vec<Bar>) -> Result<Self> {
        bars.sort_by_key(|b| b.date);
        if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(Error::DuplicateDate(w[0].date));
        }
        Ok(AssetSeries { symbol: symbol.into(), bars })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> impl Iterator<Item = f64> + '_ {
        self.bars.iter().map(|b| b.close)
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    date: String,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: f64,
}

/// Loads a `date,open,high,low,close,volume` CSV. The symbol is the file stem.
pub fn load_ohlcv(path: impl AsRef<Path>) -> Result<AssetSeries> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile { path: path.to_path_buf() });
    }
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected header `{}`, got `{}`", CSV_HEADER.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut bars = Vec::new();
    for record in reader.deserialize::<CsvRow>() {
        let row = record.map_err(|e| csv_error(path, e))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d").map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line: bars.len() as u64 + 2,
            reason: format!("bad date `{}`: {e}", row.date),
        })?;
        bars.push(Bar::new(date, row.open, row.high, row.low, row.close, row.volume)?);
    }
    if bars.is_empty() {
        return Err(Error::EmptyFile { path: path.to_path_buf() });
    }

    let symbol = path.file_stem().and_then(|s| s.to_str()).unwrap_or("asset").to_string();
    AssetSeries::new(symbol, bars)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::MalformedRow { path: path.to_path_buf(), line, reason: format!("{kind:?}") },
    }
}

/// Writes a series in the same CSV layout [`load_ohlcv`] reads.
pub fn write_ohlcv(path: impl AsRef<Path>, series: &AssetSeries) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for b in series.bars() {
        w.write_record([
            b.date.format("%Y-%m-%d").to_string(),
            format!("{}", b.open),
            format!("{}", b.high),
            format!("{}", b.low),
            format!("{}", b.close),
            format!("{}", b.volume),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Aggregates to one bar per ISO calendar week, dated by the last trading day of the week.
pub fn resample_weekly(series: &AssetSeries) -> Result<AssetSeries> {
    let bars = series.bars();
    if bars.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut out: Vec<Bar> = Vec::with_capacity(bars.len() / 5 + 1);
    let mut current_week = None;
    for bar in bars {
        let week = (bar.date.iso_week().year(), bar.date.iso_week().week());
        match out.last_mut() {
            Some(agg) if current_week == Some(week) => {
                agg.date = bar.date;
                agg.close = bar.close;
                agg.high = agg.high.max(bar.high);
                agg.low = agg.low.min(bar.low);
                agg.volume += bar.volume;
            }
            _ => {
                current_week = Some(week);
                out.push(*bar);
            }
        }
    }
    AssetSeries::new(series.symbol(), out)
}
