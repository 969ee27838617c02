//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use r3l_core::data::{synthetic, MarketData, Split};
use r3l_core::learner::{LearnerConfig, LearnerState, TrainSetup};
use r3l_core::rng::stream;
use r3l_core::{EnvConfig, NetConfig, RiskConfig, Transition};

/// Random-walk market with `assets` risky assets plus risk-free and a learner
/// sized like the defaults except for `window`, `hidden` and `quantiles`.
pub fn setup(assets: usize, window: usize, hidden: usize, quantiles: usize) -> TrainSetup {
    let series = synthetic::random_walks(assets, 300, &mut stream(0, "data", 0));
    let market = Arc::new(MarketData::from_series(series, 3.8e-4, window).expect("market"));
    TrainSetup {
        train: Split { first: window - 1, last: 299 },
        eval: None,
        market,
        env: EnvConfig::default(),
        net: NetConfig { assets: assets + 1, window, hidden, gru_layers: 2, quantiles, horizon: 52 },
        learner: LearnerConfig {
            risk: RiskConfig { alpha: 1.0 - 10.0 / quantiles as f64, ..Default::default() },
            ..Default::default()
        },
        seed: 0,
    }
}

/// Fresh learner state plus `count` transitions from one acting worker.
pub fn learner_and_batch(setup: &TrainSetup, count: usize) -> (LearnerState, Vec<Transition>) {
    let ls = setup.initial_state().expect("learner");
    let mut worker = setup.worker(0, ls.actor.clone()).expect("worker");
    let batch = (0..count).map(|_| worker.step().expect("step").transition).collect();
    (ls, batch)
}
