//! Brute-force reference solutions used to check the fast paths.
//!
//! Everything here trades speed for directness: grid searches over the
//! feasible set instead of closed forms, and Monte-Carlo rollouts instead of
//! fixed points.

use rand::Rng;

use crate::action::{action_to_weights, RawAction};
use crate::backtest::mean_variance_weights;
use crate::critic::{quantile_huber_grad, tau_hat};
use crate::error::{Error, Result};
use crate::portfolio::{rebalance, PortfolioState};
use crate::rng::stream;

/// Outcome of one brute-force comparison suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    /// Largest deviation from the brute-force answer.
    pub worst: f64,
    pub tolerance: f64,
    /// Extra structural conditions (complementarity and the like) held.
    pub structural: bool,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.structural && self.worst <= self.tolerance
    }

    pub fn line(&self) -> String {
        format!(
            "{:<22} {:>5} cases  worst {:.3e}  (tol {:.0e})  {}",
            self.name,
            self.cases,
            self.worst,
            self.tolerance,
            if self.passed() { "ok" } else { "FAILED" }
        )
    }
}

/// Best post-trade value found by scanning the net trade of one pivot asset
/// in `step` currency increments. Every other trade is implied by the pivot
/// through `V' w_i = h_i + d_i`, and a grid point is kept when the cost
/// budget `V' = V - c1 sum(sell) - c2 sum(buy)` holds to within one grid cell.
pub fn rebalance_grid(holdings: &[f64], target: &[f64], sell_cost: f64, buy_cost: f64, step: f64) -> Result<f64> {
    let n = holdings.len();
    if n == 0 || target.len() != n {
        return Err(Error::Shape("holdings and target must have equal non-zero length".into()));
    }
    if !(step > 0.0) {
        return Err(Error::invalid("step", "must be > 0"));
    }
    let value: f64 = holdings.iter().sum();
    let pivot = (0..n)
        .max_by(|&a, &b| target[a].abs().total_cmp(&target[b].abs()))
        .expect("non-empty");
    let wp = target[pivot];
    if wp.abs() < 1e-12 {
        return Err(Error::invalid("target", "all target weights are zero"));
    }

    // the trade needed with free trading, and a bound on how far costs can move it
    let free: f64 = (0..n).map(|i| (value * target[i] - holdings[i]).abs()).sum();
    let cmax = sell_cost.max(buy_cost);
    let gross: f64 = target.iter().map(|w| w.abs()).sum();
    let reach = 2.0 * cmax * (free + value * gross) * wp.abs() / (1.0 - cmax * gross).max(1e-3) + 10.0 * step;
    let center = value * wp - holdings[pivot];
    let cells = (reach / step).ceil() as i64;
    let slack = step * (1.0 + cmax * gross) / wp.abs();

    let mut best: Option<f64> = None;
    for k in -cells..=cells {
        let d_pivot = center + k as f64 * step;
        let v_post = (holdings[pivot] + d_pivot) / wp;
        if !(v_post > 0.0) {
            continue;
        }
        let mut sold = 0.0;
        let mut bought = 0.0;
        for i in 0..n {
            let d = if i == pivot { d_pivot } else { v_post * target[i] - holdings[i] };
            if d > 0.0 {
                bought += d;
            } else {
                sold -= d;
            }
        }
        let budget = value - sell_cost * sold - buy_cost * bought;
        if (budget - v_post).abs() <= slack {
            best = Some(best.map_or(v_post, |b: f64| b.max(v_post)));
        }
    }
    best.ok_or_else(|| Error::invalid("rebalance", "no feasible grid point"))
}

/// Two-asset mean-variance weights by scanning `w1` over `[lo, hi]`:
/// maximizes `W'R - zeta W'SW` with `w2 = 1 - w1`.
pub fn mean_variance_grid_2(mean: [f64; 2], cov: [[f64; 2]; 2], zeta: f64, lo: f64, hi: f64, step: f64) -> [f64; 2] {
    let cells = ((hi - lo) / step).round() as i64;
    let mut best = (f64::NEG_INFINITY, lo);
    for k in 0..=cells {
        let w1 = lo + k as f64 * step;
        let w2 = 1.0 - w1;
        let ret = w1 * mean[0] + w2 * mean[1];
        let var = w1 * w1 * cov[0][0] + 2.0 * w1 * w2 * cov[0][1] + w2 * w2 * cov[1][1];
        let obj = ret - zeta * var;
        if obj > best.0 {
            best = (obj, w1);
        }
    }
    [best.1, 1.0 - best.1]
}

/// A two-state Markov reward process with Bernoulli rewards in `{0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStateChain {
    /// `P(r = 1 | s)`.
    pub reward_prob: [f64; 2],
    /// `P(s' = 0 | s)`.
    pub stay_zero: [f64; 2],
    pub gamma: f64,
}

impl Default for TwoStateChain {
    fn default() -> Self {
        TwoStateChain { reward_prob: [0.3, 0.7], stay_zero: [0.6, 0.45], gamma: 0.5 }
    }
}

impl TwoStateChain {
    /// `(probability, reward, next state)` for every branch out of `s`.
    fn branches(&self, s: usize) -> [(f64, f64, usize); 4] {
        let p = self.reward_prob[s];
        let q = self.stay_zero[s];
        [
            (p * q, 1.0, 0),
            (p * (1.0 - q), 1.0, 1),
            ((1.0 - p) * q, 0.0, 0),
            ((1.0 - p) * (1.0 - q), 0.0, 1),
        ]
    }

    /// Quantiles learned by expected quantile-Huber descent on Bellman
    /// targets built from the current estimates.
    pub fn learn_quantiles(&self, n: usize, kappa: f64, sweeps: usize) -> [Vec<f64>; 2] {
        let mut theta = [vec![0.0; n], vec![0.0; n]];
        for sweep in 0..sweeps {
            let lr = 0.05 / (1.0 + sweep as f64 / 500.0);
            let frozen = theta.clone();
            for (s, th) in theta.iter_mut().enumerate() {
                let mut g = vec![0.0; n];
                for (prob, r, next) in self.branches(s) {
                    let target: Vec<f64> = frozen[next].iter().map(|t| r + self.gamma * t).collect();
                    for (gi, d) in g.iter_mut().zip(quantile_huber_grad(th, &target, kappa)) {
                        *gi += prob * d;
                    }
                }
                // the gradient scales with kappa in the quadratic zone
                for (t, d) in th.iter_mut().zip(&g) {
                    *t -= lr * d / kappa;
                }
            }
        }
        theta
    }

    /// Empirical return quantiles at the `n` midpoints `tau_hat`, from
    /// `rollouts` discounted episodes per start state truncated once
    /// `gamma^t < 1e-12`.
    pub fn monte_carlo_quantiles<R: Rng>(&self, n: usize, rollouts: usize, rng: &mut R) -> [Vec<f64>; 2] {
        let horizon = (1e-12f64.ln() / self.gamma.ln()).ceil() as usize;
        let mut out = [Vec::new(), Vec::new()];
        for (start, slot) in out.iter_mut().enumerate() {
            let mut returns = Vec::with_capacity(rollouts);
            for _ in 0..rollouts {
                let mut s = start;
                let mut z = 0.0;
                let mut disc = 1.0;
                for _ in 0..horizon {
                    if rng.random::<f64>() < self.reward_prob[s] {
                        z += disc;
                    }
                    disc *= self.gamma;
                    s = if rng.random::<f64>() < self.stay_zero[s] { 0 } else { 1 };
                }
                returns.push(z);
            }
            returns.sort_by(f64::total_cmp);
            *slot = (0..n)
                .map(|i| {
                    let k = ((tau_hat(i, n) * rollouts as f64).ceil() as usize).clamp(1, rollouts);
                    returns[k - 1]
                })
                .collect();
        }
        out
    }
}

/// Seeded 2-3 asset rebalances: fixed-point value against [`rebalance_grid`]
/// (relative error) plus complementarity and the per-asset holdings identity.
pub fn rebalance_suite(seed: u64, instances: usize) -> Result<SuiteResult> {
    let mut rng = stream(seed, "oracle", 0);
    let mut worst = 0.0f64;
    let mut structural = true;
    for _ in 0..instances {
        let n = rng.random_range(2..=3);
        let mut scores = || RawAction((0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>());
        let (from_raw, to_raw) = (scores(), scores());
        let from = action_to_weights(&from_raw, 3.0)?;
        let target = action_to_weights(&to_raw, 3.0)?;
        let value = rng.random_range(1_000.0..20_000.0);
        let prices: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..200.0)).collect();
        let (c1, c2) = (rng.random_range(0.0..0.02), rng.random_range(0.0..0.02));
        let p = PortfolioState::new(value, from, prices.clone())?;
        let holdings = p.holdings();
        let (next, plan) = rebalance(&p, &target, c1, c2)?;
        let grid = rebalance_grid(&holdings, target.as_slice(), c1, c2, 0.01)?;
        worst = worst.max((next.value - grid).abs() / grid);
        structural &= plan.is_consistent();
        for i in 0..n {
            let after = holdings[i] + (plan.buy_size[i] - plan.sell_size[i]) * prices[i];
            structural &= (after - next.value * target[i]).abs() <= 1e-9 * value;
        }
        let budget = value - c1 * plan.sold_value(&prices) - c2 * plan.bought_value(&prices);
        structural &= (budget - next.value).abs() <= 1e-8 * value;
    }
    Ok(SuiteResult { name: "rebalance grid", cases: instances, worst, tolerance: 1e-4, structural })
}

/// Random two-asset mean-variance problems: closed form against a `1e-4`
/// grid over `w1` in `[-3, 4]`. Instances whose optimum leaves the grid are
/// redrawn.
pub fn mean_variance_suite(seed: u64, instances: usize) -> Result<SuiteResult> {
    let mut rng = stream(seed, "oracle", 1);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < instances {
        let mean = [rng.random_range(-0.01..0.02), rng.random_range(-0.01..0.02)];
        let (s1, s2) = (rng.random_range(0.01..0.06), rng.random_range(0.01..0.06));
        let rho = rng.random_range(-0.6..0.6);
        let cov = [[s1 * s1, rho * s1 * s2], [rho * s1 * s2, s2 * s2]];
        let zeta = rng.random_range(0.5..10.0);
        let w = mean_variance_weights(&mean, &[cov[0].to_vec(), cov[1].to_vec()], zeta)?;
        if !(-2.9..3.9).contains(&w[0]) {
            continue;
        }
        let g = mean_variance_grid_2(mean, cov, zeta, -3.0, 4.0, 1e-4);
        worst = worst.max((w[0] - g[0]).abs()).max((w[1] - g[1]).abs());
        done += 1;
    }
    Ok(SuiteResult { name: "mean-variance grid", cases: instances, worst, tolerance: 1e-4, structural: true })
}

/// Learned `n`-quantile return distributions of [`TwoStateChain::default`]
/// against Monte-Carlo quantiles; `worst` is the largest absolute gap.
pub fn tabular_suite(seed: u64, n: usize, rollouts: usize) -> Result<SuiteResult> {
    let chain = TwoStateChain::default();
    let learned = chain.learn_quantiles(n, 1e-3, 4000);
    let mc = chain.monte_carlo_quantiles(n, rollouts, &mut stream(seed, "oracle", 2));
    let worst = (0..2)
        .flat_map(|s| learned[s].iter().zip(&mc[s]).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    Ok(SuiteResult { name: "tabular quantiles", cases: 2 * n, worst, tolerance: 0.02, structural: true })
}
