//! The 18 binary candlestick indicators fed to the networks.
//!
//! Thresholds: doji body <= 5% of range, "significant" body >= 70% of range,
//! hammer-family shadow >= 2x body. Trend context for the hammer family is the
//! direction of the two prior closes, so those flags need two bars of lookback.

use super::{AssetSeries, Bar};

pub const NUM_PATTERNS: usize = 18;

pub const DOJI_BODY_RATIO: f64 = 0.05;
pub const SIGNIFICANT_BODY_RATIO: f64 = 0.7;
pub const SHADOW_BODY_RATIO: f64 = 2.0;
pub const SMALL_SHADOW_RATIO: f64 = 0.1;
pub const SPINNING_BODY_RATIO: f64 = 0.3;

/// Indicator order inside a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(usize)]
pub enum Pattern {
    Bearish,
    Bullish,
    Significant,
    Hammer,
    InverseHammer,
    BullishEngulfing,
    PiercingLine,
    MorningStar,
    BullishHarami,
    HangingMan,
    ShootingStar,
    BearishEngulfing,
    EveningStar,
    ThreeBlackCrows,
    DarkCloudCover,
    BearishHarami,
    Doji,
    SpinningTop,
}

impl Pattern {
    pub const ALL: [Pattern; NUM_PATTERNS] = [
        Pattern::Bearish,
        Pattern::Bullish,
        Pattern::Significant,
        Pattern::Hammer,
        Pattern::InverseHammer,
        Pattern::BullishEngulfing,
        Pattern::PiercingLine,
        Pattern::MorningStar,
        Pattern::BullishHarami,
        Pattern::HangingMan,
        Pattern::ShootingStar,
        Pattern::BearishEngulfing,
        Pattern::EveningStar,
        Pattern::ThreeBlackCrows,
        Pattern::DarkCloudCover,
        Pattern::BearishHarami,
        Pattern::Doji,
        Pattern::SpinningTop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One bar's indicator flags, each 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PatternFlags(pub [u8; NUM_PATTERNS]);

impl PatternFlags {
    pub fn get(&self, p: Pattern) -> u8 {
        self.0[p.index()]
    }

    fn set(&mut self, p: Pattern, on: bool) {
        self.0[p.index()] = on as u8;
    }
}

fn is_doji(b: &Bar) -> bool {
    b.body() <= DOJI_BODY_RATIO * b.range()
}

fn hammer_shape(b: &Bar) -> bool {
    b.body() > 0.0 && b.lower_shadow() >= SHADOW_BODY_RATIO * b.body() && b.upper_shadow() <= SMALL_SHADOW_RATIO * b.range()
}

fn inverted_shape(b: &Bar) -> bool {
    b.body() > 0.0 && b.upper_shadow() >= SHADOW_BODY_RATIO * b.body() && b.lower_shadow() <= SMALL_SHADOW_RATIO * b.range()
}

/// Flags for every bar of the series; multi-bar patterns are 0 where lookback is missing.
pub fn compute_patterns(series: &AssetSeries) -> Vec<PatternFlags> {
    let bars = series.bars();
    (0..bars.len()).map(|t| flags_at(bars, t)).collect()
}

pub(crate) fn flags_at(bars: &[Bar], t: usize) -> PatternFlags {
    use Pattern::*;
    let cur = &bars[t];
    let mut f = PatternFlags::default();

    f.set(Bearish, cur.is_bearish());
    f.set(Bullish, cur.is_bullish());
    f.set(Significant, cur.range() > 0.0 && cur.body() >= SIGNIFICANT_BODY_RATIO * cur.range());
    let doji = is_doji(cur);
    f.set(Doji, doji);
    f.set(
        SpinningTop,
        !doji
            && cur.body() <= SPINNING_BODY_RATIO * cur.range()
            && cur.upper_shadow() >= cur.body()
            && cur.lower_shadow() >= cur.body(),
    );

    if t >= 1 {
        let prev = &bars[t - 1];
        f.set(
            BullishEngulfing,
            prev.is_bearish() && cur.is_bullish() && cur.open < prev.close && cur.close > prev.open,
        );
        f.set(
            BearishEngulfing,
            prev.is_bullish() && cur.is_bearish() && cur.open > prev.close && cur.close < prev.open,
        );
        f.set(
            PiercingLine,
            prev.is_bearish()
                && cur.is_bullish()
                && cur.open < prev.low
                && cur.close > prev.body_mid()
                && cur.close < prev.open,
        );
        f.set(
            DarkCloudCover,
            prev.is_bullish()
                && cur.is_bearish()
                && cur.open > prev.high
                && cur.close < prev.body_mid()
                && cur.close > prev.open,
        );
        f.set(
            BullishHarami,
            prev.is_bearish() && cur.is_bullish() && cur.open > prev.close && cur.close < prev.open,
        );
        f.set(
            BearishHarami,
            prev.is_bullish() && cur.is_bearish() && cur.open < prev.close && cur.close > prev.open,
        );
    }

    if t >= 2 {
        let (a, b) = (&bars[t - 2], &bars[t - 1]);
        let downtrend = b.close < a.close;
        let uptrend = b.close > a.close;
        f.set(Hammer, downtrend && hammer_shape(cur));
        f.set(HangingMan, uptrend && hammer_shape(cur));
        f.set(InverseHammer, downtrend && inverted_shape(cur));
        f.set(ShootingStar, uptrend && inverted_shape(cur));

        let small_star = b.body() < 0.5 * a.body();
        f.set(
            MorningStar,
            a.is_bearish()
                && small_star
                && b.open.max(b.close) < a.close
                && cur.is_bullish()
                && cur.close > a.body_mid(),
        );
        f.set(
            EveningStar,
            a.is_bullish()
                && small_star
                && b.open.min(b.close) > a.close
                && cur.is_bearish()
                && cur.close < a.body_mid(),
        );
        let crow = |p: &Bar, c: &Bar| c.is_bearish() && c.close < p.close && c.open < p.open && c.open > p.close;
        f.set(ThreeBlackCrows, a.is_bearish() && crow(a, b) && crow(b, cur));
    }
    f
}
