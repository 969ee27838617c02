use std::sync::Arc;

use super::patterns::{flags_at, NUM_PATTERNS};
use super::{AssetSeries, Bar};
use crate::action::WeightVector;
use crate::error::{Error, Result};

/// Raw channels per bar, in open, close, high, low, volume order.
pub const NUM_RAW: usize = 5;
pub const NUM_FEATURES: usize = NUM_RAW + NUM_PATTERNS;

/// An `n x g x h` window of per-asset features, `g = NUM_FEATURES`.
///
/// Stored step-major (`[step][asset][feature]`) so one recurrent step reads a
/// contiguous row. Step `h - 1` is the decision bar.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    assets: usize,
    window: usize,
    data: Vec<f64>,
}

impl FeatureBlock {
    pub fn zeros(assets: usize, window: usize) -> Self {
        FeatureBlock { assets, window, data: vec![0.0; assets * window * NUM_FEATURES] }
    }

    /// Wraps step-major data (`[step][asset][feature]`).
    pub fn from_raw(assets: usize, window: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != assets * window * NUM_FEATURES {
            return Err(Error::Shape(format!(
                "{} values for a {assets} x {NUM_FEATURES} x {window} block",
                data.len()
            )));
        }
        Ok(FeatureBlock { assets, window, data })
    }

    /// `(n, g, h)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.assets, NUM_FEATURES, self.window)
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn get(&self, asset: usize, feature: usize, step: usize) -> f64 {
        self.data[(step * self.assets + asset) * NUM_FEATURES + feature]
    }

    /// All assets' features at one window step, concatenated.
    pub fn step_row(&self, step: usize) -> &[f64] {
        let width = self.assets * NUM_FEATURES;
        &self.data[step * width..(step + 1) * width]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn set(&mut self, asset: usize, feature: usize, step: usize, v: f64) {
        self.data[(step * self.assets + asset) * NUM_FEATURES + feature] = v;
    }
}

/// What the agent observes at a decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub features: Arc<FeatureBlock>,
    pub weights: WeightVector,
    pub time_index: usize,
}

impl State {
    pub fn new(features: Arc<FeatureBlock>, weights: WeightVector, time_index: usize) -> Result<Self> {
        if features.assets() != weights.len() {
            return Err(Error::Shape(format!(
                "feature block has {} assets but weight vector has {}",
                features.assets(),
                weights.len()
            )));
        }
        Ok(State { features, weights, time_index })
    }

    pub fn assets(&self) -> usize {
        self.weights.len()
    }
}

/// Normalized window of `h` bars ending at `t` for every asset.
///
/// Prices are divided by the window's last close, volume by the window's
/// maximum volume (0 when the window has no volume). Pattern flags come from
/// `flags`, which must have been computed without look-ahead.
pub(crate) fn window_features(
    assets: &[(&[Bar], &[super::PatternFlags])],
    t: usize,
    h: usize,
) -> Result<FeatureBlock> {
    if h == 0 {
        return Err(Error::invalid("window", "window size must be >= 1"));
    }
    let mut block = FeatureBlock::zeros(assets.len(), h);
    for (a, (bars, flags)) in assets.iter().enumerate() {
        if t >= bars.len() || t + 1 < h {
            return Err(Error::InsufficientHistory { needed: h, index: t, available: bars.len().min(t + 1) });
        }
        let window = &bars[t + 1 - h..=t];
        let scale = window[h - 1].close;
        let vmax = window.iter().map(|b| b.volume).fold(0.0, f64::max);
        for (step, bar) in window.iter().enumerate() {
            let raw = [bar.open, bar.close, bar.high, bar.low];
            for (f, v) in raw.into_iter().enumerate() {
                block.set(a, f, step, v / scale);
            }
            block.set(a, 4, step, if vmax > 0.0 { bar.volume / vmax } else { 0.0 });
            let pf = &flags[t + 1 - h + step];
            for p in 0..NUM_PATTERNS {
                block.set(a, NUM_RAW + p, step, pf.0[p] as f64);
            }
        }
    }
    Ok(block)
}

/// Feature block for bar index `t` computed only from bars `0..=t`.
pub fn build_features(portfolio: &[AssetSeries], t: usize, h: usize) -> Result<FeatureBlock> {
    let flags: Vec<Vec<super::PatternFlags>> = portfolio
        .iter()
        .map(|s| {
            let bars = &s.bars()[..(t + 1).min(s.len())];
            (0..bars.len()).map(|k| flags_at(bars, k)).collect()
        })
        .collect();
    let views: Vec<(&[Bar], &[super::PatternFlags])> =
        portfolio.iter().zip(&flags).map(|(s, f)| (&s.bars()[..(t + 1).min(s.len())], f.as_slice())).collect();
    window_features(&views, t, h)
}

pub fn build_state(portfolio: &[AssetSeries], weights: WeightVector, t: usize, h: usize) -> Result<State> {
    if weights.len() != portfolio.len() {
        return Err(Error::Shape(format!("{} assets but {} weights", portfolio.len(), weights.len())));
    }
    let features = build_features(portfolio, t, h)?;
    State::new(Arc::new(features), weights, t)
}
