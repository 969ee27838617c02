//! The trading MDP: rebalance to the chosen weights at the close, hold for
//! one period, observe the portfolio return.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::action::WeightVector;
use crate::data::{MarketData, State};
use crate::error::{Error, Result};
use crate::portfolio::{grow, rebalance, reward, PortfolioState, TradePlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub initial_value: f64,
    pub sell_cost: f64,
    pub buy_cost: f64,
    /// Decision steps per episode (52 weekly steps = one year).
    pub horizon: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { initial_value: 10_000.0, sell_cost: 0.002, buy_cost: 0.002, horizon: 52 }
    }
}

/// One `(s, a, r, s')` record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<State>,
    pub action: WeightVector,
    pub reward: f64,
    pub next_state: Arc<State>,
    /// Set on wipeout only; the episode horizon is a time limit and still bootstraps.
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub transition: Transition,
    pub done: bool,
    pub plan: TradePlan,
    /// Drifted weights held just before the trade.
    pub pre_trade: WeightVector,
    /// Portfolio value at the end of the period.
    pub value: f64,
}

/// Applies one decision: rebalance `portfolio` to `action`, then grow it by the
/// next period's returns at bar `bar + 1`.
pub fn env_step(
    state: &Arc<State>,
    portfolio: &PortfolioState,
    action: &WeightVector,
    market: &MarketData,
    bar: usize,
    cfg: &EnvConfig,
) -> Result<(StepOutcome, PortfolioState)> {
    if bar + 1 >= market.len() {
        return Err(Error::InsufficientHistory { needed: bar + 2, index: bar + 1, available: market.len() });
    }
    let (traded, plan) = rebalance(portfolio, action, cfg.sell_cost, cfg.buy_cost)?;
    let (next_portfolio, r, terminal) = match grow(&traded, market.returns_at(bar + 1)) {
        Ok(grown) => {
            let r = reward(portfolio.value, grown.value);
            (grown, r, false)
        }
        Err(Error::Wipeout { .. }) => {
            // value floored just above zero so the state stays well-formed
            let dead = PortfolioState { value: f64::MIN_POSITIVE, step: traded.step + 1, ..traded };
            (dead, -1.0, true)
        }
        Err(e) => return Err(e),
    };
    let next_state = Arc::new(State::new(
        market.features_at(bar + 1)?,
        next_portfolio.weights.clone(),
        state.time_index + 1,
    )?);
    let done = terminal || state.time_index + 1 >= cfg.horizon;
    let outcome = StepOutcome {
        transition: Transition { state: state.clone(), action: action.clone(), reward: r, next_state, terminal },
        done,
        plan,
        pre_trade: portfolio.weights.clone(),
        value: next_portfolio.value,
    };
    Ok((outcome, next_portfolio))
}

/// Owns one episode's portfolio and position in the data.
#[derive(Debug)]
pub struct PortfolioEnv {
    market: Arc<MarketData>,
    cfg: EnvConfig,
    bar: usize,
    last_bar: usize,
    portfolio: PortfolioState,
    state: Arc<State>,
    done: bool,
}

impl PortfolioEnv {
    /// Starts an episode at decision bar `start` with everything in the risk-free asset.
    /// The episode also ends when bar `last_bar` is reached.
    pub fn new(market: Arc<MarketData>, cfg: EnvConfig, start: usize, last_bar: usize) -> Result<Self> {
        if start >= last_bar || last_bar >= market.len() {
            return Err(Error::invalid("start", format!("episode start {start} must precede last bar {last_bar}")));
        }
        let weights = WeightVector::all_in(market.assets(), market.risk_free_index());
        let portfolio = PortfolioState::new(cfg.initial_value, weights.clone(), market.closes_at(start))?;
        let state = Arc::new(State::new(market.features_at(start)?, weights, 0)?);
        Ok(PortfolioEnv { market, cfg, bar: start, last_bar, portfolio, state, done: false })
    }

    pub fn state(&self) -> &Arc<State> {
        &self.state
    }

    pub fn portfolio(&self) -> &PortfolioState {
        &self.portfolio
    }

    pub fn bar(&self) -> usize {
        self.bar
    }

    pub fn market(&self) -> &Arc<MarketData> {
        &self.market
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: &WeightVector) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Runtime("step called on a finished episode".into()));
        }
        let (mut outcome, next) = env_step(&self.state, &self.portfolio, action, &self.market, self.bar, &self.cfg)?;
        self.bar += 1;
        if self.bar >= self.last_bar {
            outcome.done = true;
        }
        self.done = outcome.done;
        self.portfolio = next;
        self.state = outcome.transition.next_state.clone();
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::series_from_returns;

    fn market(a: &[f64], b: &[f64], rf: f64) -> Arc<MarketData> {
        Arc::new(
            MarketData::from_series(vec![series_from_returns("A", 10.0, a), series_from_returns("B", 20.0, b)], rf, 1)
                .unwrap(),
        )
    }

    #[test]
    fn inert_market_gives_zero_reward() {
        let m = market(&[0.0; 5], &[0.0; 5], 0.0);
        let mut env = PortfolioEnv::new(m, EnvConfig { sell_cost: 0.0, buy_cost: 0.0, ..Default::default() }, 0, 5).unwrap();
        for w in [[0.2, 0.5, 0.3], [1.5, -0.7, 0.2]] {
            let out = env.step(&WeightVector::new(w.to_vec()).unwrap()).unwrap();
            assert_eq!(out.transition.reward, 0.0);
        }
    }

    #[test]
    fn frictionless_hold_reward_is_weighted_return() {
        let a = [0.03, -0.01, 0.02];
        let b = [-0.02, 0.04, 0.01];
        let m = market(&a, &b, 0.001);
        let cfg = EnvConfig { sell_cost: 0.0, buy_cost: 0.0, ..Default::default() };
        let mut env = PortfolioEnv::new(m.clone(), cfg, 0, 3).unwrap();
        env.step(&WeightVector::new(vec![0.5, 0.3, 0.2]).unwrap()).unwrap();
        // hold the drifted weights: reward = sum w_{t-1} R_t
        let held = env.portfolio().weights.clone();
        let out = env.step(&held).unwrap();
        let expected: f64 = held.as_slice().iter().zip(m.returns_at(2)).map(|(w, r)| w * r).sum();
        assert!((out.transition.reward - expected).abs() < 1e-14);
    }

    #[test]
    fn three_step_trajectory_matches_sequential_hand_computation() {
        let a = [0.05, -0.02, 0.01];
        let b = [-0.01, 0.03, 0.02];
        let rf = 0.001;
        let m = market(&a, &b, rf);
        let c = 0.002;
        let cfg = EnvConfig { sell_cost: c, buy_cost: c, ..Default::default() };
        let actions = [[0.4, 0.4, 0.2], [0.1, 0.6, 0.3], [0.7, -0.2, 0.5]];
        let mut env = PortfolioEnv::new(m, cfg, 0, 3).unwrap();

        // independent sequential evaluation: solve the cost equation in closed form per step
        let mut value = 10_000.0f64;
        let mut w = vec![0.0, 0.0, 1.0];
        let rets = [[a[0], b[0], rf], [a[1], b[1], rf], [a[2], b[2], rf]];
        for (k, act) in actions.iter().enumerate() {
            let h: Vec<f64> = w.iter().map(|x| x * value).collect();
            // with uniform cost c and fixed directions: V' = V - c * sum |V' w_i - h_i|
            // try each sign pattern and keep the self-consistent one
            let mut v_after = f64::NAN;
            for mask in 0..8u32 {
                let s: Vec<f64> = (0..3).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
                let num = value + c * (0..3).map(|i| s[i] * h[i]).sum::<f64>();
                let den = 1.0 + c * (0..3).map(|i| s[i] * act[i]).sum::<f64>();
                let v = num / den;
                if (0..3).all(|i| (v * act[i] - h[i]) * s[i] >= -1e-9) {
                    v_after = v;
                    break;
                }
            }
            let gross: f64 = (0..3).map(|i| act[i] * (1.0 + rets[k][i])).sum();
            let new_value = v_after * gross;
            let expected_reward = new_value / value - 1.0;
            w = (0..3).map(|i| act[i] * (1.0 + rets[k][i]) / gross).collect();
            value = new_value;

            let out = env.step(&WeightVector::new(act.to_vec()).unwrap()).unwrap();
            assert!((out.transition.reward - expected_reward).abs() < 1e-12, "step {k}");
            assert!((out.value - value).abs() < 1e-8);
            for i in 0..3 {
                assert!((env.portfolio().weights[i] - w[i]).abs() < 1e-12);
            }
        }
        assert!(env.is_done());
    }

    #[test]
    fn wipeout_is_terminal_with_reward_minus_one() {
        let m = market(&[-0.9, 0.0], &[0.5, 0.0], 0.0);
        let mut env = PortfolioEnv::new(m, EnvConfig::default(), 0, 2).unwrap();
        let out = env.step(&WeightVector::new(vec![2.0, -1.0, 0.0]).unwrap()).unwrap();
        assert!(out.done && out.transition.terminal);
        assert_eq!(out.transition.reward, -1.0);
    }

    #[test]
    fn horizon_ends_episode() {
        let m = market(&[0.0; 10], &[0.0; 10], 0.0);
        let mut env = PortfolioEnv::new(m, EnvConfig { horizon: 2, ..Default::default() }, 0, 10).unwrap();
        let hold = env.portfolio().weights.clone();
        assert!(!env.step(&hold).unwrap().done);
        assert!(env.step(&hold).unwrap().done);
        assert!(env.step(&hold).is_err());
    }
}
