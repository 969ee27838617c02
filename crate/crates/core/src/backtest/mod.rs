//! Held-out evaluation: strategies, equity curves, metrics and sweeps.

mod metrics;
mod mv;
mod sweep;

pub use metrics::{empirical_var, metrics, MetricsReport};
pub use mv::{mean_and_covariance, mean_variance_weights, RIDGE};
pub use sweep::{sensitivity_sweep, SweepParam, SweepRow};

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::action::{action_to_weights, RawAction, WeightVector};
use crate::data::{MarketData, Split, State};
use crate::env::{env_step, EnvConfig};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::portfolio::PortfolioState;

/// What a strategy sees when choosing the next weights.
pub struct StepContext<'a> {
    pub market: &'a MarketData,
    /// Decision bar.
    pub bar: usize,
    /// Steps taken so far.
    pub step: usize,
    pub state: &'a Arc<State>,
    pub portfolio: &'a PortfolioState,
}

pub trait Strategy {
    fn name(&self) -> String;
    fn weights(&mut self, ctx: &StepContext<'_>) -> Result<WeightVector>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquityPoint {
    pub step: usize,
    pub value: f64,
    /// Weights chosen at the previous decision (initial weights at step 0).
    pub weights: Vec<f64>,
    /// `sum_i |w_target - w_held|` of the trade made at the previous decision.
    pub turnover: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EquityCurve {
    points: Vec<EquityPoint>,
}

impl EquityCurve {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a point; steps must strictly increase.
    pub fn push(&mut self, p: EquityPoint) -> Result<()> {
        if let Some(last) = self.points.last() {
            if p.step <= last.step {
                return Err(Error::invalid("step", format!("{} after {}", p.step, last.step)));
            }
        }
        self.points.push(p);
        Ok(())
    }

    pub fn points(&self) -> &[EquityPoint] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// Per-period simple returns.
    pub fn returns(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[1].value / w[0].value - 1.0).collect()
    }

    pub fn final_value(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.value)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,value\n");
        for p in &self.points {
            s.push_str(&format!("{},{}\n", p.step, p.value));
        }
        s
    }
}

/// Runs `strategy` from `split.first` to `split.last`, starting fully in the
/// risk-free asset. Every decision goes through the training environment's
/// step function, so costs and accounting are identical.
pub fn run_strategy(strategy: &mut dyn Strategy, market: &MarketData, split: Split, cfg: &EnvConfig) -> Result<EquityCurve> {
    if split.last >= market.len() || split.first >= split.last {
        return Err(Error::InsufficientHistory { needed: split.last + 1, index: split.first, available: market.len() });
    }
    let n = market.assets();
    let weights = WeightVector::all_in(n, market.risk_free_index());
    let mut portfolio = PortfolioState::new(cfg.initial_value, weights.clone(), market.closes_at(split.first))?;
    let mut state = Arc::new(State::new(market.features_at(split.first)?, weights.clone(), 0)?);
    let step_cfg = EnvConfig { horizon: usize::MAX, ..*cfg };

    let mut curve = EquityCurve::new();
    curve.push(EquityPoint { step: 0, value: portfolio.value, weights: weights.into_inner(), turnover: 0.0 })?;
    for (k, bar) in (split.first..split.last).enumerate() {
        let ctx = StepContext { market, bar, step: k, state: &state, portfolio: &portfolio };
        let target = strategy.weights(&ctx)?;
        let (outcome, next) = env_step(&state, &portfolio, &target, market, bar, &step_cfg)?;
        if outcome.transition.terminal {
            return Err(Error::Wipeout { step: k, factor: 0.0 });
        }
        let turnover = target.as_slice().iter().zip(portfolio.weights.as_slice()).map(|(a, b)| (a - b).abs()).sum();
        curve.push(EquityPoint { step: k + 1, value: next.value, weights: target.into_inner(), turnover })?;
        portfolio = next;
        state = outcome.transition.next_state;
    }
    Ok(curve)
}

/// Equal weights at the first step, then never trades.
#[derive(Debug, Default)]
pub struct BuyAndHold;

impl Strategy for BuyAndHold {
    fn name(&self) -> String {
        "BH".into()
    }

    fn weights(&mut self, ctx: &StepContext<'_>) -> Result<WeightVector> {
        if ctx.step == 0 {
            Ok(WeightVector::equal(ctx.market.assets()))
        } else {
            Ok(ctx.portfolio.weights.clone())
        }
    }
}

/// Short every risky asset at `-1/(n-1)`, hold 2.0 in the risk-free asset,
/// then never trade.
#[derive(Debug, Default)]
pub struct SellAndHold;

pub fn sell_and_hold_weights(n: usize) -> Result<WeightVector> {
    if n < 2 {
        return Err(Error::invalid("assets", "sell-and-hold needs a risky asset"));
    }
    let mut w = vec![-1.0 / (n - 1) as f64; n];
    w[n - 1] = 2.0;
    WeightVector::new(w)
}

impl Strategy for SellAndHold {
    fn name(&self) -> String {
        "SH".into()
    }

    fn weights(&mut self, ctx: &StepContext<'_>) -> Result<WeightVector> {
        if ctx.step == 0 {
            sell_and_hold_weights(ctx.market.assets())
        } else {
            Ok(ctx.portfolio.weights.clone())
        }
    }
}

/// Independent standard-normal scores mapped through the action transform.
#[derive(Debug)]
pub struct RandomStrategy<R> {
    pub rng: R,
    pub delta: f64,
}

impl<R: Rng> RandomStrategy<R> {
    pub fn draw(&mut self, n: usize) -> Result<WeightVector> {
        let raw = RawAction((0..n).map(|_| self.rng.sample(StandardNormal)).collect());
        action_to_weights(&raw, self.delta)
    }
}

impl<R: Rng> Strategy for RandomStrategy<R> {
    fn name(&self) -> String {
        "RN".into()
    }

    fn weights(&mut self, ctx: &StepContext<'_>) -> Result<WeightVector> {
        self.draw(ctx.market.assets())
    }
}

/// Rolling-window mean-variance allocation over the risky assets; the
/// risk-free asset (zero variance, which would make the closed form
/// unbounded) gets weight 0.
#[derive(Debug)]
pub struct MeanVariance {
    pub window: usize,
    pub zeta: f64,
}

impl Strategy for MeanVariance {
    fn name(&self) -> String {
        "MV".into()
    }

    fn weights(&mut self, ctx: &StepContext<'_>) -> Result<WeightVector> {
        let n = ctx.market.assets();
        let rf = ctx.market.risk_free_index();
        let first = (ctx.bar + 1).saturating_sub(self.window).max(1);
        if ctx.bar < first + 1 || n < 2 {
            return Ok(WeightVector::equal(n));
        }
        let risky = |t: usize| -> Vec<f64> {
            let r = ctx.market.returns_at(t);
            (0..n).filter(|i| *i != rf).map(|i| r[i]).collect()
        };
        let history: Vec<Vec<f64>> = (first..=ctx.bar).map(risky).collect();
        let (mean, cov) = mean_and_covariance(&history)?;
        let w = mean_variance_weights(&mean, &cov, self.zeta)?.into_inner();
        let mut full = w.into_iter();
        WeightVector::new((0..n).map(|i| if i == rf { 0.0 } else { full.next().expect("one weight per risky asset") }).collect())
    }
}

/// Deterministic policy: actor scores mapped through the action transform.
#[derive(Debug, Clone)]
pub struct PolicyStrategy {
    pub actor: Network,
    pub delta: f64,
    pub label: String,
}

impl Strategy for PolicyStrategy {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn weights(&mut self, ctx: &StepContext<'_>) -> Result<WeightVector> {
        let raw = self.actor.actor_raw(&[ctx.state.as_ref()])?;
        action_to_weights(&RawAction(raw.into_iter().next().expect("one row")), self.delta)
    }
}

/// Deterministic evaluation of an actor over `split`.
pub fn evaluate_policy(actor: &Network, delta: f64, market: &MarketData, split: Split, cfg: &EnvConfig) -> Result<EquityCurve> {
    let mut s = PolicyStrategy { actor: actor.clone(), delta, label: "R3L".into() };
    run_strategy(&mut s, market, split, cfg)
}
