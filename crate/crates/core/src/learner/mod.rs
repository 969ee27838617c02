//! The actor-critic training loop: exploration, replay, quantile critic
//! updates, utility-ascent actor updates and soft target synchronization.

mod exploration;
mod replay;

pub use exploration::ExplorationSchedule;
pub use replay::{ReplayBuffer, Tagged};

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::{action_to_weights, RawAction, WeightVector};
use crate::autodiff::{Adam, AdamConfig, ParamSet, Tape};
use crate::backtest::{empirical_var, evaluate_policy, metrics};
use crate::checkpoint::Checkpoint;
use crate::critic::{bellman_target, utility_coefficients, RiskConfig};
use crate::data::{MarketData, Split, State};
use crate::env::{EnvConfig, PortfolioEnv, Transition};
use crate::error::{Error, Result};
use crate::nn::{record_delta_transform, soft_update, NetConfig, Network, Role};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub updates: u64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub risk: RiskConfig,
    pub delta: f64,
    pub tau: f64,
    /// Updates between soft target syncs.
    pub t_target: u64,
    /// Updates between actor snapshot publications.
    pub t_actor: u64,
    pub exploration: ExplorationSchedule,
    /// Environment steps collected per update in single-process mode.
    pub steps_per_update: usize,
    /// Transitions collected before the first update (at least one batch).
    pub warmup: usize,
    /// Updates between evaluation episodes; 0 disables.
    pub eval_interval: u64,
    /// Updates between log rows; 0 logs evaluation rows only.
    pub log_interval: u64,
    /// Updates between checkpoints; 0 disables.
    pub checkpoint_interval: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            batch_size: 32,
            replay_capacity: 2000,
            updates: 80_000,
            actor_lr: 1e-5,
            critic_lr: 1e-5,
            risk: RiskConfig::default(),
            delta: 3.0,
            tau: 0.5,
            t_target: 10,
            t_actor: 20,
            exploration: ExplorationSchedule::default(),
            steps_per_update: 1,
            warmup: 32,
            eval_interval: 1000,
            log_interval: 1,
            checkpoint_interval: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self, quantiles: usize) -> Result<()> {
        self.risk.validate(quantiles)?;
        self.exploration.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if self.replay_capacity < self.batch_size {
            return Err(Error::invalid("replay_capacity", "must hold at least one batch"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid("tau", "must be in [0, 1]"));
        }
        let rates: [(&'static str, f64); 2] = [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)];
        for (name, lr) in rates {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(name, "must be > 0"));
            }
        }
        if self.t_target == 0 || self.t_actor == 0 {
            return Err(Error::invalid("t_target", "sync intervals must be positive"));
        }
        if self.steps_per_update == 0 {
            return Err(Error::invalid("steps_per_update", "must be positive"));
        }
        Ok(())
    }
}

/// Online and target networks with their optimizers.
#[derive(Debug, Clone)]
pub struct LearnerState {
    pub actor: Network,
    pub critic: Network,
    pub target_actor: Network,
    pub target_critic: Network,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub updates: u64,
}

impl LearnerState {
    /// Fresh networks; targets start as copies of the online networks.
    pub fn new(net: NetConfig, cfg: &LearnerConfig, rng: &mut impl Rng) -> Result<Self> {
        let actor = Network::new(Role::Actor, net, rng)?;
        let critic = Network::new(Role::Critic, net, rng)?;
        Ok(Self::from_networks(actor.clone(), critic.clone(), actor, critic, cfg))
    }

    pub fn from_networks(actor: Network, critic: Network, target_actor: Network, target_critic: Network, cfg: &LearnerConfig) -> Self {
        let actor_opt = Adam::new(actor.params(), AdamConfig { lr: cfg.actor_lr, ..Default::default() });
        let critic_opt = Adam::new(critic.params(), AdamConfig { lr: cfg.critic_lr, ..Default::default() });
        LearnerState { actor, critic, target_actor, target_critic, actor_opt, critic_opt, updates: 0 }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            net: *self.actor.config(),
            updates: self.updates,
            actor: self.actor.params().clone(),
            critic: self.critic.params().clone(),
            target_actor: self.target_actor.params().clone(),
            target_critic: self.target_critic.params().clone(),
        }
    }

    /// One critic step, one actor step, then the periodic target sync.
    /// Returns `(critic loss, batch utility)` measured before each step.
    pub fn update(&mut self, batch: &[&Transition], cfg: &LearnerConfig) -> Result<(f64, f64)> {
        let loss = critic_update(self, batch, cfg)?;
        let util = actor_update(self, batch, cfg)?;
        self.updates += 1;
        if self.updates % cfg.t_target == 0 {
            soft_update(self.target_actor.params_mut(), self.actor.params(), cfg.tau)?;
            soft_update(self.target_critic.params_mut(), self.critic.params(), cfg.tau)?;
        }
        Ok((loss, util))
    }
}

/// `mu(s) + eps` with clipped Gaussian `eps` at the schedule's sigma for `updates`.
pub fn select_action<R: Rng>(
    actor: &Network,
    state: &State,
    sched: &ExplorationSchedule,
    updates: u64,
    rng: &mut R,
) -> Result<RawAction> {
    let mut raw = actor.actor_raw(&[state])?.pop().expect("one row");
    let sigma = sched.sigma(updates);
    for v in &mut raw {
        *v += sched.noise(sigma, rng);
    }
    Ok(RawAction(raw))
}

fn check_batch(batch: &[&Transition]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("batch_size", "batch must be non-empty"));
    }
    Ok(())
}

/// Bellman targets for a batch, row-major `M x N`, from the target networks.
pub fn batch_targets(ls: &LearnerState, batch: &[&Transition], cfg: &LearnerConfig) -> Result<Vec<f64>> {
    let next: Vec<&State> = batch.iter().map(|t| t.next_state.as_ref()).collect();
    let next_actions: Vec<WeightVector> = ls
        .target_actor
        .actor_raw(&next)?
        .into_iter()
        .map(|r| action_to_weights(&RawAction(r), cfg.delta))
        .collect::<Result<_>>()?;
    let refs: Vec<&WeightVector> = next_actions.iter().collect();
    let theta_next = ls.target_critic.critic_quantiles(&next, &refs)?;
    let n = ls.critic.config().quantiles;
    let mut targets = Vec::with_capacity(batch.len() * n);
    for (t, th) in batch.iter().zip(&theta_next) {
        if t.terminal {
            targets.extend(std::iter::repeat_n(t.reward, n));
        } else {
            targets.extend(bellman_target(t.reward, cfg.risk.gamma, th));
        }
    }
    Ok(targets)
}

/// Mean quantile-Huber loss of the online critic on `batch` and its parameter gradients.
pub fn critic_loss_and_grads(
    critic: &Network,
    batch: &[&Transition],
    targets: Vec<f64>,
    kappa: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = critic.config().assets;
    let mut tape = Tape::new();
    let vars = critic.params().attach(&mut tape);
    let mut actions = Vec::with_capacity(batch.len() * n);
    for t in batch {
        actions.extend_from_slice(t.action.as_slice());
    }
    let a = tape.constant(batch.len(), n, actions)?;
    let states: Vec<&State> = batch.iter().map(|t| t.state.as_ref()).collect();
    let theta = critic.record(&mut tape, &vars, &states, Some(a))?;
    let per_sample = tape.quantile_huber(theta, targets, kappa)?;
    let loss = tape.mean(per_sample);
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((value, ParamSet::collect_grads(&vars, &grads)))
}

/// One ADAM step on the online critic. Returns the loss before the step.
pub fn critic_update(ls: &mut LearnerState, batch: &[&Transition], cfg: &LearnerConfig) -> Result<f64> {
    check_batch(batch)?;
    let targets = batch_targets(ls, batch, cfg)?;
    let (loss, grads) = critic_loss_and_grads(&ls.critic, batch, targets, cfg.risk.kappa)?;
    ls.critic_opt.step(ls.critic.params_mut(), &grads)?;
    Ok(loss)
}

/// Mean utility `U(K(s, w(mu(s))))` over the batch states and its gradient
/// with respect to the actor parameters. The critic is only read.
pub fn actor_utility_and_grads(
    actor: &Network,
    critic: &Network,
    states: &[&State],
    cfg: &LearnerConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let coeffs = utility_coefficients(critic.config().quantiles, &cfg.risk)?;
    let mut tape = Tape::new();
    let actor_vars = actor.params().attach(&mut tape);
    let critic_vars = critic.params().attach(&mut tape);
    let raw = actor.record(&mut tape, &actor_vars, states, None)?;
    let w = record_delta_transform(&mut tape, raw, cfg.delta);
    let theta = critic.record(&mut tape, &critic_vars, states, Some(w))?;
    let u = tape.row_dot(theta, coeffs)?;
    let mean_u = tape.mean(u);
    let value = tape.value(mean_u).item();
    let grads = tape.backward(mean_u)?;
    Ok((value, ParamSet::collect_grads(&actor_vars, &grads)))
}

/// One ADAM ascent step on the actor. Returns the utility before the step.
pub fn actor_update(ls: &mut LearnerState, batch: &[&Transition], cfg: &LearnerConfig) -> Result<f64> {
    check_batch(batch)?;
    let states: Vec<&State> = batch.iter().map(|t| t.state.as_ref()).collect();
    let (util, grads) = actor_utility_and_grads(&ls.actor, &ls.critic, &states, cfg)?;
    let descent: Vec<Vec<f64>> = grads.into_iter().map(|g| g.into_iter().map(|v| -v).collect()).collect();
    ls.actor_opt.step(ls.actor.params_mut(), &descent)?;
    Ok(util)
}

/// An acting worker: owns one environment, an exploration stream and the
/// latest actor snapshot it was handed.
#[derive(Debug)]
pub struct ActorWorker {
    pub id: usize,
    market: Arc<MarketData>,
    split: Split,
    env_cfg: EnvConfig,
    schedule: ExplorationSchedule,
    delta: f64,
    rng: StreamRng,
    env: Option<PortfolioEnv>,
    policy: Network,
    version: u64,
    policy_updates: u64,
    produced: u64,
}

impl ActorWorker {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        market: Arc<MarketData>,
        split: Split,
        env_cfg: EnvConfig,
        schedule: ExplorationSchedule,
        delta: f64,
        rng: StreamRng,
        policy: Network,
    ) -> Result<Self> {
        if split.first >= split.last || split.last >= market.len() {
            return Err(Error::invalid("split", "training range needs at least two bars"));
        }
        Ok(ActorWorker { id, market, split, env_cfg, schedule, delta, rng, env: None, policy, version: 0, policy_updates: 0, produced: 0 })
    }

    /// Installs a newer snapshot. Older or equal versions are ignored.
    pub fn set_policy(&mut self, policy: Network, version: u64, updates: u64) {
        if version > self.version {
            self.policy = policy;
            self.version = version;
            self.policy_updates = updates;
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn policy(&self) -> &Network {
        &self.policy
    }

    pub fn produced(&self) -> u64 {
        self.produced
    }

    pub fn sigma(&self) -> f64 {
        self.schedule.sigma(self.policy_updates)
    }

    fn fresh_env(&mut self) -> Result<PortfolioEnv> {
        let start = self.rng.random_range(self.split.first..self.split.last);
        PortfolioEnv::new(self.market.clone(), self.env_cfg, start, self.split.last)
    }

    /// Acts once, starting a new episode when needed. Environment errors end
    /// the episode and the worker retries on a fresh one.
    pub fn step(&mut self) -> Result<Tagged> {
        const MAX_RETRIES: usize = 16;
        let mut last_err = None;
        for _ in 0..MAX_RETRIES {
            let mut env = match self.env.take() {
                Some(env) if !env.is_done() => env,
                _ => self.fresh_env()?,
            };
            let raw = select_action(&self.policy, env.state(), &self.schedule, self.policy_updates, &mut self.rng)?;
            let w = action_to_weights(&raw, self.delta)?;
            match env.step(&w) {
                Ok(outcome) => {
                    self.env = Some(env);
                    let tagged = Tagged {
                        transition: outcome.transition,
                        actor_id: self.id,
                        actor_seq: self.produced,
                        seq: 0,
                        version: self.version,
                    };
                    self.produced += 1;
                    return Ok(tagged);
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(Error::Runtime(format!("actor {} failed repeatedly: {}", self.id, last_err.expect("at least one attempt"))))
    }
}

/// Everything `train` needs.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub market: Arc<MarketData>,
    pub train: Split,
    /// Held-out range for periodic evaluation episodes.
    pub eval: Option<Split>,
    pub env: EnvConfig,
    pub net: NetConfig,
    pub learner: LearnerConfig,
    pub seed: u64,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.learner.validate(self.net.quantiles)?;
        if self.net.assets != self.market.assets() || self.net.window != self.market.window() {
            return Err(Error::Shape("network shape does not match market data".into()));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Result<LearnerState> {
        LearnerState::new(self.net, &self.learner, &mut stream(self.seed, "init", 0))
    }

    pub fn worker(&self, id: usize, policy: Network) -> Result<ActorWorker> {
        ActorWorker::new(
            id,
            self.market.clone(),
            self.train,
            self.env,
            self.learner.exploration,
            self.learner.delta,
            stream(self.seed, "actor", id as u64),
            policy,
        )
    }

    /// Deterministic evaluation on the held-out range: `(TR, VaR)`.
    pub fn evaluate(&self, actor: &Network) -> Result<Option<(f64, f64)>> {
        let Some(split) = self.eval else { return Ok(None) };
        let curve = evaluate_policy(actor, self.learner.delta, &self.market, split, &self.env)?;
        let m = metrics(&curve, self.market.risk_free(), self.learner.risk.alpha)?;
        Ok(Some((m.tr, empirical_var(&curve.returns(), self.learner.risk.alpha))))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub update: u64,
    pub critic_loss: f64,
    pub mean_utility: f64,
    pub eval_tr: Option<f64>,
    pub eval_var: Option<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "update,criticLoss,meanUtility,evalTR,evalVaR,sigma";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.update,
                r.critic_loss,
                r.mean_utility,
                opt(r.eval_tr),
                opt(r.eval_var),
                r.sigma
            ));
        }
        s
    }

    pub fn last_eval(&self) -> Option<(f64, f64)> {
        self.rows.iter().rev().find_map(|r| Some((r.eval_tr?, r.eval_var?)))
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    pub state: LearnerState,
    pub log: TrainingLog,
}

/// Decides what to record after update `u` (1-based).
pub(crate) fn log_due(cfg: &LearnerConfig, u: u64) -> (bool, bool, bool) {
    let last = u == cfg.updates;
    let eval = cfg.eval_interval > 0 && (u % cfg.eval_interval == 0 || last);
    let log = eval || (cfg.log_interval > 0 && u % cfg.log_interval == 0);
    let ckpt = cfg.checkpoint_interval > 0 && (u % cfg.checkpoint_interval == 0 || last);
    (log, eval, ckpt)
}

/// Single-process training with one acting worker. Deterministic for a given setup.
pub fn train(setup: &TrainSetup, on_checkpoint: &mut dyn FnMut(&Checkpoint) -> Result<()>) -> Result<TrainOutput> {
    setup.validate()?;
    let cfg = &setup.learner;
    let mut ls = setup.initial_state()?;
    let mut log = TrainingLog::default();
    if cfg.updates == 0 {
        return Ok(TrainOutput { state: ls, log });
    }
    let mut worker = setup.worker(0, ls.actor.clone())?;
    let mut replay = ReplayBuffer::new(cfg.replay_capacity)?;
    let mut sample_rng = stream(setup.seed, "replay", 0);

    while replay.len() < cfg.warmup.max(cfg.batch_size) {
        replay.push(worker.step()?);
    }
    for _ in 0..cfg.updates {
        for _ in 0..cfg.steps_per_update {
            replay.push(worker.step()?);
        }
        let batch: Vec<&Transition> = replay.sample(cfg.batch_size, &mut sample_rng)?.into_iter().map(|t| &t.transition).collect();
        let (loss, util) = ls.update(&batch, cfg)?;
        let u = ls.updates;
        if u % cfg.t_actor == 0 {
            worker.set_policy(ls.actor.clone(), u / cfg.t_actor, u);
        }
        let (do_log, do_eval, do_ckpt) = log_due(cfg, u);
        if do_log {
            let eval = if do_eval { setup.evaluate(&ls.actor)? } else { None };
            log.rows.push(LogRow {
                update: u,
                critic_loss: loss,
                mean_utility: util,
                eval_tr: eval.map(|e| e.0),
                eval_var: eval.map(|e| e.1),
                sigma: worker.sigma(),
            });
        }
        if do_ckpt {
            on_checkpoint(&ls.checkpoint())?;
        }
    }
    Ok(TrainOutput { state: ls, log })
}
