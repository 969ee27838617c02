//! Decoupled acting and learning: `K` worker threads generate transitions into
//! a bounded queue, one learner owns the replay buffer and publishes actor
//! snapshots that workers pick up between steps.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, RecvTimeoutError, SendTimeoutError, Sender};
use parking_lot::{Mutex, RwLock};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::learner::{log_due, ActorWorker, LogRow, ReplayBuffer, Tagged, TrainOutput, TrainSetup, TrainingLog};
use crate::nn::Network;
use crate::rng::stream;

pub const DEFAULT_QUEUE_BOUND: usize = 10_000;
const POLL: Duration = Duration::from_millis(5);

/// An immutable published actor.
#[derive(Debug)]
pub struct Snapshot {
    pub version: u64,
    pub updates: u64,
    pub actor: Network,
}

/// Latest actor snapshot. Readers get a whole `Arc<Snapshot>`, never a mix.
#[derive(Debug)]
pub struct SnapshotChannel {
    latest: RwLock<Arc<Snapshot>>,
}

impl SnapshotChannel {
    pub fn new(actor: Network) -> Self {
        SnapshotChannel { latest: RwLock::new(Arc::new(Snapshot { version: 0, updates: 0, actor })) }
    }

    /// Publishes a copy of `actor` under the next version number.
    pub fn publish(&self, actor: &Network, updates: u64) -> u64 {
        let mut slot = self.latest.write();
        let version = slot.version + 1;
        *slot = Arc::new(Snapshot { version, updates, actor: actor.clone() });
        version
    }

    pub fn latest(&self) -> Arc<Snapshot> {
        self.latest.read().clone()
    }

    pub fn version(&self) -> u64 {
        self.latest.read().version
    }
}

/// Where acting workers deliver transitions.
pub trait TransitionSink {
    /// `Ok(false)` means the sink is closed and the worker should stop.
    fn send(&mut self, t: Tagged, stop: &AtomicBool) -> Result<bool>;
}

impl TransitionSink for Sender<Tagged> {
    fn send(&mut self, mut t: Tagged, stop: &AtomicBool) -> Result<bool> {
        loop {
            match self.send_timeout(t, POLL) {
                Ok(()) => return Ok(true),
                Err(SendTimeoutError::Timeout(back)) => {
                    // queue full: keep blocking unless we are shutting down
                    if stop.load(Ordering::Acquire) {
                        return Ok(false);
                    }
                    t = back;
                }
                Err(SendTimeoutError::Disconnected(_)) => return Ok(false),
            }
        }
    }
}

impl TransitionSink for Vec<Tagged> {
    fn send(&mut self, t: Tagged, _stop: &AtomicBool) -> Result<bool> {
        self.push(t);
        Ok(true)
    }
}

/// What one worker did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkerReport {
    pub actor_id: usize,
    /// Transitions accepted by the sink.
    pub delivered: u64,
    /// Snapshot versions this worker acted with, in order, without repeats.
    pub versions: Vec<u64>,
}

/// Acts until `stop` is set or the sink closes, refreshing the policy from
/// `snapshots` before every step.
pub fn actor_loop(
    worker: &mut ActorWorker,
    snapshots: &SnapshotChannel,
    sink: &mut dyn TransitionSink,
    stop: &AtomicBool,
) -> Result<WorkerReport> {
    let mut report = WorkerReport { actor_id: worker.id, ..Default::default() };
    while !stop.load(Ordering::Acquire) {
        let snap = snapshots.latest();
        if snap.version > worker.version() {
            worker.set_policy(snap.actor.clone(), snap.version, snap.updates);
        }
        if report.versions.last() != Some(&worker.version()) {
            report.versions.push(worker.version());
        }
        let t = worker.step()?;
        if !sink.send(t, stop)? {
            break;
        }
        report.delivered += 1;
    }
    Ok(report)
}

/// Provenance accounting for a distributed run.
#[derive(Debug, Clone, Default)]
pub struct RunAudit {
    pub workers: Vec<WorkerReport>,
    /// Transitions the learner took off the queue, per actor id.
    pub received: Vec<u64>,
    /// Distinct actor ids among transitions resident in the replay buffer at the end.
    pub ids_in_buffer: Vec<usize>,
    pub buffer_pushed: u64,
    pub buffer_evicted: u64,
    pub buffer_len: usize,
    pub final_version: u64,
    pub elapsed: Duration,
}

impl RunAudit {
    /// Every delivered transition was received and every received one reached the buffer.
    pub fn lossless(&self) -> bool {
        let delivered: u64 = self.workers.iter().map(|w| w.delivered).sum();
        let received: u64 = self.received.iter().sum();
        let per_actor = self.workers.iter().all(|w| self.received.get(w.actor_id).copied() == Some(w.delivered));
        per_actor
            && delivered == received
            && received == self.buffer_pushed
            && self.buffer_pushed - self.buffer_evicted == self.buffer_len as u64
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for w in &self.workers {
            s.push_str(&format!(
                "actor {} delivered {} received {} versions {}..{} ({} distinct)\n",
                w.actor_id,
                w.delivered,
                self.received.get(w.actor_id).copied().unwrap_or(0),
                w.versions.first().copied().unwrap_or(0),
                w.versions.last().copied().unwrap_or(0),
                w.versions.len()
            ));
        }
        s.push_str(&format!(
            "buffer pushed {} evicted {} resident {} final_version {} elapsed_ms {}\n",
            self.buffer_pushed,
            self.buffer_evicted,
            self.buffer_len,
            self.final_version,
            self.elapsed.as_millis()
        ));
        s
    }
}

#[derive(Debug)]
pub struct DistributedOutput {
    pub train: TrainOutput,
    pub audit: RunAudit,
}

struct Shared {
    stop: AtomicBool,
    failure: Mutex<Option<String>>,
}

fn receive(replay: &mut ReplayBuffer, received: &mut [u64], t: Tagged) {
    received[t.actor_id] += 1;
    replay.push(t);
}

/// Runs `actors` acting workers and one learner (the calling thread) for the
/// configured number of updates.
pub fn run_distributed(
    setup: &TrainSetup,
    actors: usize,
    queue_bound: usize,
    on_checkpoint: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<DistributedOutput> {
    if actors == 0 {
        return Err(Error::invalid("actors", "need at least one acting worker"));
    }
    if queue_bound == 0 {
        return Err(Error::invalid("queue_bound", "must be positive"));
    }
    setup.validate()?;
    let cfg = &setup.learner;
    let started = Instant::now();
    let mut ls = setup.initial_state()?;
    let mut log = TrainingLog::default();
    let mut replay = ReplayBuffer::new(cfg.replay_capacity)?;
    let mut sample_rng = stream(setup.seed, "replay", 0);
    let mut received = vec![0u64; actors];
    let snapshots = SnapshotChannel::new(ls.actor.clone());
    let shared = Shared { stop: AtomicBool::new(cfg.updates == 0), failure: Mutex::new(None) };
    let (tx, rx) = bounded::<Tagged>(queue_bound);

    let workers: Vec<ActorWorker> = (0..actors).map(|id| setup.worker(id, ls.actor.clone())).collect::<Result<_>>()?;

    let (reports, learner_result) = std::thread::scope(|scope| {
        let handles: Vec<_> = workers
            .into_iter()
            .map(|mut worker| {
                let mut sink = tx.clone();
                let (snapshots, shared) = (&snapshots, &shared);
                scope.spawn(move || {
                    let id = worker.id;
                    let r = actor_loop(&mut worker, snapshots, &mut sink, &shared.stop);
                    if let Err(e) = &r {
                        shared.failure.lock().get_or_insert_with(|| format!("actor {id}: {e}"));
                        shared.stop.store(true, Ordering::Release);
                    }
                    r
                })
            })
            .collect();
        drop(tx);

        let learner = (|| -> Result<()> {
            if cfg.updates == 0 {
                return Ok(());
            }
            let need = cfg.warmup.max(cfg.batch_size);
            while replay.len() < need {
                match rx.recv_timeout(POLL) {
                    Ok(t) => receive(&mut replay, &mut received, t),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                }
                if let Some(msg) = shared.failure.lock().clone() {
                    return Err(Error::Runtime(msg));
                }
            }
            for _ in 0..cfg.updates {
                while let Ok(t) = rx.try_recv() {
                    receive(&mut replay, &mut received, t);
                }
                if let Some(msg) = shared.failure.lock().clone() {
                    return Err(Error::Runtime(msg));
                }
                let batch: Vec<_> = replay.sample(cfg.batch_size, &mut sample_rng)?.into_iter().map(|t| &t.transition).collect();
                let (loss, util) = ls.update(&batch, cfg)?;
                let u = ls.updates;
                if u % cfg.t_actor == 0 {
                    snapshots.publish(&ls.actor, u);
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
                        sigma: cfg.exploration.sigma(snapshots.latest().updates),
                    });
                }
                if do_ckpt {
                    on_checkpoint(&ls.checkpoint())?;
                }
            }
            Ok(())
        })();

        shared.stop.store(true, Ordering::Release);
        // drain until every worker has dropped its sender
        loop {
            match rx.recv_timeout(POLL) {
                Ok(t) => receive(&mut replay, &mut received, t),
                Err(RecvTimeoutError::Timeout) => {
                    if handles.iter().all(|h| h.is_finished()) && rx.is_empty() {
                        break;
                    }
                }
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        let reports: Vec<Result<WorkerReport>> = handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Runtime("actor thread panicked".into()))))
            .collect();
        (reports, learner)
    });

    learner_result?;
    let workers = reports.into_iter().collect::<Result<Vec<_>>>()?;
    let mut ids: Vec<usize> = replay.iter().map(|t| t.actor_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let audit = RunAudit {
        workers,
        received,
        ids_in_buffer: ids,
        buffer_pushed: replay.pushed(),
        buffer_evicted: replay.evicted(),
        buffer_len: replay.len(),
        final_version: snapshots.version(),
        elapsed: started.elapsed(),
    };
    Ok(DistributedOutput { train: TrainOutput { state: ls, log }, audit })
}

/// Acting throughput (transitions per second) of `actors` workers over
/// `duration`, with a consumer draining the queue and no learning.
pub fn measure_throughput(setup: &TrainSetup, actors: usize, duration: Duration) -> Result<f64> {
    if actors == 0 {
        return Err(Error::invalid("actors", "need at least one acting worker"));
    }
    setup.validate()?;
    let ls = setup.initial_state()?;
    let snapshots = SnapshotChannel::new(ls.actor.clone());
    let stop = AtomicBool::new(false);
    let (tx, rx) = bounded::<Tagged>(DEFAULT_QUEUE_BOUND);
    let workers: Vec<ActorWorker> = (0..actors).map(|id| setup.worker(id, ls.actor.clone())).collect::<Result<_>>()?;
    let start = Instant::now();
    let delivered = std::thread::scope(|scope| {
        let handles: Vec<_> = workers
            .into_iter()
            .map(|mut w| {
                let mut sink = tx.clone();
                let (snapshots, stop) = (&snapshots, &stop);
                scope.spawn(move || actor_loop(&mut w, snapshots, &mut sink, stop))
            })
            .collect();
        drop(tx);
        let mut count = 0u64;
        while start.elapsed() < duration {
            if rx.recv_timeout(POLL).is_ok() {
                count += 1;
            }
        }
        stop.store(true, Ordering::Release);
        while rx.recv().is_ok() {}
        for h in handles {
            h.join().map_err(|_| Error::Runtime("actor thread panicked".into()))??;
        }
        Ok::<u64, Error>(count)
    })?;
    Ok(delivered as f64 / start.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::{synthetic, MarketData, Split};
    use crate::env::EnvConfig;
    use crate::learner::LearnerConfig;
    use crate::nn::{NetConfig, Role};
    use crate::critic::RiskConfig;

    fn tiny_setup(updates: u64) -> TrainSetup {
        let market = Arc::new(MarketData::from_series(synthetic::alternating(80, 0.02), 3.8e-4, 2).unwrap());
        TrainSetup {
            market,
            train: Split { first: 1, last: 60 },
            eval: None,
            env: EnvConfig { horizon: 8, ..Default::default() },
            net: NetConfig { assets: 3, window: 2, hidden: 4, gru_layers: 1, quantiles: 8, horizon: 8 },
            learner: LearnerConfig {
                updates,
                batch_size: 4,
                warmup: 8,
                replay_capacity: 64,
                t_actor: 2,
                risk: RiskConfig { alpha: 0.75, ..Default::default() },
                ..Default::default()
            },
            seed: 11,
        }
    }

    fn sentinel(like: &Network, v: f64) -> Network {
        let mut p = like.params().clone();
        p.map_values(|_| v);
        Network::from_params(Role::Actor, *like.config(), p).unwrap()
    }

    #[test]
    fn preset_stop_produces_nothing() {
        let setup = tiny_setup(0);
        let ls = setup.initial_state().unwrap();
        let mut w = setup.worker(0, ls.actor.clone()).unwrap();
        let snaps = SnapshotChannel::new(ls.actor);
        let mut sink: Vec<Tagged> = Vec::new();
        let r = actor_loop(&mut w, &snaps, &mut sink, &AtomicBool::new(true)).unwrap();
        assert_eq!(r.delivered, 0);
        assert!(sink.is_empty());
    }

    struct StopAfter {
        n: usize,
        got: Vec<Tagged>,
        stop: Arc<AtomicBool>,
        on: Option<Box<dyn FnMut(usize)>>,
    }

    impl TransitionSink for StopAfter {
        fn send(&mut self, t: Tagged, _stop: &AtomicBool) -> Result<bool> {
            self.got.push(t);
            if let Some(f) = self.on.as_mut() {
                f(self.got.len());
            }
            if self.got.len() >= self.n {
                self.stop.store(true, Ordering::Release);
            }
            Ok(true)
        }
    }

    #[test]
    fn single_worker_matches_sequential_steps() {
        let setup = tiny_setup(0);
        let ls = setup.initial_state().unwrap();
        let mut seq = setup.worker(0, ls.actor.clone()).unwrap();
        let expected: Vec<Tagged> = (0..10).map(|_| seq.step().unwrap()).collect();

        let mut looped = setup.worker(0, ls.actor.clone()).unwrap();
        let snaps = SnapshotChannel::new(ls.actor);
        let stop = Arc::new(AtomicBool::new(false));
        let mut sink = StopAfter { n: 10, got: Vec::new(), stop: stop.clone(), on: None };
        actor_loop(&mut looped, &snaps, &mut sink, &stop).unwrap();
        assert_eq!(sink.got.len(), 10);
        for (a, b) in sink.got.iter().zip(&expected) {
            assert_eq!(a.transition, b.transition);
            assert_eq!(a.actor_seq, b.actor_seq);
        }
    }

    /// Zero network whose raw output is exactly `(v, 0, ..., 0)`.
    fn head_sentinel(like: &Network, v: f64) -> Network {
        let mut p = like.params().clone();
        p.map_values(|_| 0.0);
        p.get_mut("head.b").unwrap().data_mut()[0] = v;
        Network::from_params(Role::Actor, *like.config(), p).unwrap()
    }

    #[test]
    fn snapshot_bump_mid_episode_changes_actions() {
        let setup = tiny_setup(0);
        let ls = setup.initial_state().unwrap();
        let snaps = Arc::new(SnapshotChannel::new(head_sentinel(&ls.actor, 0.0)));
        let mut w = setup.worker(0, head_sentinel(&ls.actor, 0.0)).unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let s2 = snaps.clone();
        let bumped = head_sentinel(&ls.actor, 20.0);
        let mut sink = StopAfter {
            n: 6,
            got: Vec::new(),
            stop: stop.clone(),
            on: Some(Box::new(move |k| {
                if k == 3 {
                    s2.publish(&bumped, 1);
                }
            })),
        };
        actor_loop(&mut w, &snaps, &mut sink, &stop).unwrap();
        let versions: Vec<u64> = sink.got.iter().map(|t| t.version).collect();
        assert_eq!(versions, vec![0, 0, 0, 1, 1, 1]);
        // version 0 scores are noise around zero (|eps| <= 0.5), version 1 puts
        // nearly everything on asset 0: the upper weight bound is 7/3 for n = 3
        for t in &sink.got[..3] {
            assert!(t.transition.action[0] < 1.0);
        }
        for t in &sink.got[3..] {
            assert!(t.transition.action[0] > 2.3);
        }
    }

    #[test]
    fn readers_never_see_torn_snapshots() {
        let setup = tiny_setup(0);
        let ls = setup.initial_state().unwrap();
        let base = ls.actor.clone();
        let snaps = SnapshotChannel::new(sentinel(&base, 0.0));
        let stop = AtomicBool::new(false);
        std::thread::scope(|s| {
            s.spawn(|| {
                for v in 1..=500u64 {
                    snaps.publish(&sentinel(&base, v as f64), v);
                }
                stop.store(true, Ordering::Release);
            });
            for _ in 0..2 {
                s.spawn(|| {
                    let mut last = 0;
                    while !stop.load(Ordering::Acquire) {
                        let snap = snaps.latest();
                        let expect = snap.version as f64;
                        assert!(snap.actor.params().tensors().iter().all(|t: &Tensor| t.data().iter().all(|x| *x == expect)));
                        assert!(snap.version >= last);
                        last = snap.version;
                    }
                });
            }
        });
        assert_eq!(snaps.version(), 500);
    }

    #[test]
    fn distributed_run_is_lossless() {
        let setup = tiny_setup(30);
        let out = run_distributed(&setup, 3, 16, &mut |_| Ok(())).unwrap();
        assert!(out.audit.lossless(), "{}", out.audit.to_text());
        assert_eq!(out.train.state.updates, 30);
        assert_eq!(out.audit.final_version, 15);
        for w in &out.audit.workers {
            assert!(w.versions.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn zero_actors_rejected() {
        assert!(run_distributed(&tiny_setup(1), 0, 16, &mut |_| Ok(())).is_err());
    }
}
