//! Run configuration: a sectioned `key = value` file (TOML syntax).
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected.
//!
//! ```toml
//! [data]
//! assets = []                  # OHLCV CSV paths; empty selects `synthetic`
//! synthetic = "random_walk"    # random_walk | alternating | heavy_tailed
//! synthetic_weeks = 800
//! synthetic_assets = 4         # random_walk only
//! resample_weekly = false      # set when the CSVs hold daily bars
//! risk_free = 3.8e-4           # per period
//! train_start = "2008-01-01"
//! train_end = "2018-12-31"
//! test_start = "2019-01-01"
//! test_end = "2022-12-31"
//!
//! [env]
//! initial_money = 10000.0
//! transaction_cost = 0.002     # applied to both sides unless overridden
//! sell_cost = 0.002
//! buy_cost = 0.002
//! horizon = 52
//!
//! [network]
//! window = 60
//! hidden = 64
//! gru_layers = 2
//! quantiles = 200
//!
//! [learner]
//! lr = 1e-5                    # both networks unless actor_lr / critic_lr set
//! batch_size = 32
//! replay_capacity = 2000
//! updates = 80000
//! gamma = 0.9
//! alpha = 0.95
//! kappa = 1.0
//! delta = 3.0
//! tau = 0.5
//! zeta = 0.5
//! t_target = 10
//! t_actor = 20
//! sigma0 = 0.2
//! sigma_decay = 0.9999
//! noise_clip = 0.5
//! steps_per_update = 1
//! warmup = 32
//! eval_interval = 1000
//! log_interval = 1
//! checkpoint_interval = 10000
//!
//! [runtime]
//! actors = 1
//! seed = 0
//! queue_bound = 10000
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::critic::{var_index, RiskConfig};
use crate::data::{load_ohlcv, resample_weekly, synthetic, MarketData, Split};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::learner::{ExplorationSchedule, LearnerConfig, TrainSetup};
use crate::nn::NetConfig;
use crate::rng::stream;

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub assets: Vec<PathBuf>,
    pub synthetic: String,
    pub synthetic_weeks: usize,
    pub synthetic_assets: usize,
    pub resample_weekly: bool,
    pub risk_free: f64,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            assets: Vec::new(),
            synthetic: "random_walk".into(),
            synthetic_weeks: 800,
            synthetic_assets: 4,
            resample_weekly: false,
            risk_free: 3.8e-4,
            train_start: date(2008, 1, 1),
            train_end: date(2018, 12, 31),
            test_start: date(2019, 1, 1),
            test_end: date(2022, 12, 31),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub initial_money: f64,
    pub transaction_cost: f64,
    pub sell_cost: Option<f64>,
    pub buy_cost: Option<f64>,
    pub horizon: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection { initial_money: 10_000.0, transaction_cost: 0.002, sell_cost: None, buy_cost: None, horizon: 52 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub window: usize,
    pub hidden: usize,
    pub gru_layers: usize,
    pub quantiles: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection { window: 60, hidden: 64, gru_layers: 2, quantiles: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSection {
    pub lr: f64,
    pub actor_lr: Option<f64>,
    pub critic_lr: Option<f64>,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub updates: u64,
    pub gamma: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub delta: f64,
    pub tau: f64,
    pub zeta: f64,
    pub t_target: u64,
    pub t_actor: u64,
    pub sigma0: f64,
    pub sigma_decay: f64,
    pub noise_clip: f64,
    pub steps_per_update: usize,
    pub warmup: usize,
    pub eval_interval: u64,
    pub log_interval: u64,
    pub checkpoint_interval: u64,
}

impl Default for LearnerSection {
    fn default() -> Self {
        let l = LearnerConfig::default();
        LearnerSection {
            lr: 1e-5,
            actor_lr: None,
            critic_lr: None,
            batch_size: l.batch_size,
            replay_capacity: l.replay_capacity,
            updates: l.updates,
            gamma: l.risk.gamma,
            alpha: l.risk.alpha,
            kappa: l.risk.kappa,
            delta: l.delta,
            tau: l.tau,
            zeta: l.risk.zeta,
            t_target: l.t_target,
            t_actor: l.t_actor,
            sigma0: l.exploration.sigma0,
            sigma_decay: l.exploration.decay,
            noise_clip: l.exploration.clip,
            steps_per_update: l.steps_per_update,
            warmup: l.warmup,
            eval_interval: l.eval_interval,
            log_interval: l.log_interval,
            checkpoint_interval: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeSection {
    pub actors: usize,
    pub seed: u64,
    pub queue_bound: usize,
}

impl Default for RuntimeSection {
    fn default() -> Self {
        RuntimeSection { actors: 1, seed: 0, queue_bound: crate::apex::DEFAULT_QUEUE_BOUND }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub env: EnvSection,
    pub network: NetworkSection,
    pub learner: LearnerSection,
    pub runtime: RuntimeSection,
}

fn cfg_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), reason: reason.into() }
}

impl RunConfig {
    /// Parses and validates config text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // serde reports unknown keys as "unknown field `x`, expected ..."
            let key = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field"))
                .unwrap_or("<syntax>")
                .to_string();
            Error::Config { key, reason: msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_config(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn sell_cost(&self) -> f64 {
        self.env.sell_cost.unwrap_or(self.env.transaction_cost)
    }

    pub fn buy_cost(&self) -> f64 {
        self.env.buy_cost.unwrap_or(self.env.transaction_cost)
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.learner;
        if !(0.0..=1.0).contains(&l.gamma) {
            return Err(cfg_err("learner.gamma", format!("must be in [0, 1], got {}", l.gamma)));
        }
        if !(l.alpha > 0.0 && l.alpha < 1.0) {
            return Err(cfg_err("learner.alpha", format!("must be in (0, 1), got {}", l.alpha)));
        }
        if var_index(self.network.quantiles, l.alpha).is_err() {
            return Err(cfg_err(
                "learner.alpha",
                format!(
                    "quantiles * (1 - alpha) = {} must be a positive integer",
                    self.network.quantiles as f64 * (1.0 - l.alpha)
                ),
            ));
        }
        if !(l.delta >= 0.0) {
            return Err(cfg_err("learner.delta", format!("must be >= 0, got {}", l.delta)));
        }
        if !(l.zeta >= 0.0) {
            return Err(cfg_err("learner.zeta", format!("must be >= 0, got {}", l.zeta)));
        }
        for (key, c) in [
            ("env.transaction_cost", Some(self.env.transaction_cost)),
            ("env.sell_cost", self.env.sell_cost),
            ("env.buy_cost", self.env.buy_cost),
        ] {
            if let Some(c) = c {
                if !(0.0..0.1).contains(&c) {
                    return Err(cfg_err(key, format!("must be in [0, 0.1), got {c}")));
                }
            }
        }
        if !(self.env.initial_money > 0.0) {
            return Err(cfg_err("env.initial_money", "must be > 0"));
        }
        if self.runtime.actors == 0 {
            return Err(cfg_err("runtime.actors", "must be >= 1"));
        }
        if !matches!(self.data.synthetic.as_str(), "random_walk" | "alternating" | "heavy_tailed") {
            return Err(cfg_err("data.synthetic", format!("unknown dataset `{}`", self.data.synthetic)));
        }
        if self.data.train_start > self.data.train_end || self.data.test_start > self.data.test_end {
            return Err(cfg_err("data.train_start", "date ranges must be ordered"));
        }
        let net = self.net_config(1);
        net.validate().map_err(|e| section_err("network", e))?;
        self.learner_config().validate(net.quantiles).map_err(|e| section_err("learner", e))?;
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            initial_value: self.env.initial_money,
            sell_cost: self.sell_cost(),
            buy_cost: self.buy_cost(),
            horizon: self.env.horizon,
        }
    }

    pub fn net_config(&self, assets: usize) -> NetConfig {
        NetConfig {
            assets,
            window: self.network.window,
            hidden: self.network.hidden,
            gru_layers: self.network.gru_layers,
            quantiles: self.network.quantiles,
            horizon: self.env.horizon,
        }
    }

    pub fn learner_config(&self) -> LearnerConfig {
        let l = &self.learner;
        LearnerConfig {
            batch_size: l.batch_size,
            replay_capacity: l.replay_capacity,
            updates: l.updates,
            actor_lr: l.actor_lr.unwrap_or(l.lr),
            critic_lr: l.critic_lr.unwrap_or(l.lr),
            risk: RiskConfig { alpha: l.alpha, zeta: l.zeta, kappa: l.kappa, gamma: l.gamma },
            delta: l.delta,
            tau: l.tau,
            t_target: l.t_target,
            t_actor: l.t_actor,
            exploration: ExplorationSchedule { sigma0: l.sigma0, decay: l.sigma_decay, clip: l.noise_clip },
            steps_per_update: l.steps_per_update,
            warmup: l.warmup,
            eval_interval: l.eval_interval,
            log_interval: l.log_interval,
            checkpoint_interval: l.checkpoint_interval,
        }
    }

    /// Loads the configured CSVs, or generates the synthetic dataset from the
    /// `"data"` stream of `seed`.
    pub fn load_market(&self, seed: u64) -> Result<MarketData> {
        let d = &self.data;
        let risky = if d.assets.is_empty() {
            let mut rng = stream(seed, "data", 0);
            match d.synthetic.as_str() {
                "alternating" => synthetic::alternating(d.synthetic_weeks, 0.02),
                "heavy_tailed" => synthetic::heavy_tailed(d.synthetic_weeks, Default::default(), &mut rng),
                _ => synthetic::random_walks(d.synthetic_assets, d.synthetic_weeks, &mut rng),
            }
        } else {
            d.assets
                .iter()
                .map(|p| {
                    let s = load_ohlcv(p)?;
                    if d.resample_weekly {
                        resample_weekly(&s)
                    } else {
                        Ok(s)
                    }
                })
                .collect::<Result<_>>()?
        };
        MarketData::from_series(risky, d.risk_free, self.network.window)
    }

    pub fn splits(&self, market: &MarketData) -> Result<(Split, Split)> {
        let d = &self.data;
        Ok((market.split(d.train_start, d.train_end)?, market.split(d.test_start, d.test_end)?))
    }

    /// Training setup with the given market; evaluation runs on the test split.
    pub fn train_setup(&self, market: Arc<MarketData>, seed: u64) -> Result<TrainSetup> {
        let (train, test) = self.splits(&market)?;
        Ok(TrainSetup {
            net: self.net_config(market.assets()),
            market,
            train,
            eval: Some(test),
            env: self.env_config(),
            learner: self.learner_config(),
            seed,
        })
    }

    /// Canonical serialized form (every key, defaults filled in).
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

fn section_err(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => cfg_err(&format!("{section}.{name}"), reason),
        other => cfg_err(section, other.to_string()),
    }
}

/// Reproducibility record written next to every run's outputs.
pub fn manifest(cfg: &RunConfig, seed: u64, command: &str) -> String {
    format!(
        "command = {command}\nseed = {seed}\nconfig_sha256 = {}\ncode_version = {}\n\n[config]\n{}",
        cfg.hash(),
        env!("CARGO_PKG_VERSION"),
        cfg.canonical()
    )
}
