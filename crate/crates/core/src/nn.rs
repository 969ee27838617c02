//! Actor and critic networks: a stacked GRU over the feature window followed
//! by a leaky-ReLU dense layer and a linear head.
//!
//! The actor maps a state to `n` raw action scores. The critic maps a state
//! and a weight vector to `N` return quantiles. Both see the current portfolio
//! weights next to the final recurrent state; the critic additionally sees the
//! proposed weights and the episode time index scaled by the horizon.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::WeightVector;
use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::data::{State, NUM_FEATURES};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub assets: usize,
    pub window: usize,
    pub hidden: usize,
    pub gru_layers: usize,
    pub quantiles: usize,
    /// Episode length used to scale the critic's time input.
    pub horizon: usize,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let fields: [(&'static str, usize); 6] = [
            ("assets", self.assets),
            ("window", self.window),
            ("hidden", self.hidden),
            ("gru_layers", self.gru_layers),
            ("quantiles", self.quantiles),
            ("horizon", self.horizon),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }

    fn input_width(&self) -> usize {
        self.assets * NUM_FEATURES
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Actor,
    Critic,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Actor => "actor",
            Role::Critic => "critic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    role: Role,
    cfg: NetConfig,
    params: ParamSet,
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("sized by construction")
}

impl Network {
    pub fn new(role: Role, cfg: NetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let mut params = ParamSet::new();
        let mut fan_in = cfg.input_width();
        for l in 0..cfg.gru_layers {
            let b = 1.0 / (h as f64).sqrt();
            params.push(format!("gru{l}.w_x"), uniform(rng, fan_in, 3 * h, 1.0 / (fan_in as f64).sqrt()));
            params.push(format!("gru{l}.w_h"), uniform(rng, h, 3 * h, b));
            params.push(format!("gru{l}.b"), uniform(rng, 1, 3 * h, b));
            fan_in = h;
        }
        let dense_in = Self::dense_input(role, &cfg);
        let b = 1.0 / (dense_in as f64).sqrt();
        params.push("dense.w", uniform(rng, dense_in, h, b));
        params.push("dense.b", uniform(rng, 1, h, b));
        let out = Self::output_width(role, &cfg);
        let b = 1.0 / (h as f64).sqrt();
        params.push("head.w", uniform(rng, h, out, b));
        params.push("head.b", uniform(rng, 1, out, b));
        Ok(Network { role, cfg, params })
    }

    /// Rebuilds a network around existing parameters, checking their layout.
    pub fn from_params(role: Role, cfg: NetConfig, params: ParamSet) -> Result<Self> {
        let template = Network::new(role, cfg, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        if !template.params.same_layout(&params) {
            return Err(Error::Shape(format!("parameter layout does not match {} network", role.as_str())));
        }
        Ok(Network { role, cfg, params })
    }

    fn dense_input(role: Role, cfg: &NetConfig) -> usize {
        match role {
            Role::Actor => cfg.hidden + cfg.assets,
            Role::Critic => cfg.hidden + 2 * cfg.assets + 1,
        }
    }

    fn output_width(role: Role, cfg: &NetConfig) -> usize {
        match role {
            Role::Actor => cfg.assets,
            Role::Critic => cfg.quantiles,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn check_states(&self, states: &[&State]) -> Result<()> {
        if states.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        for s in states {
            let (n, _, h) = s.features.shape();
            if n != self.cfg.assets || h != self.cfg.window {
                return Err(Error::Shape(format!(
                    "state is {n} assets x {h} steps, network expects {} x {}",
                    self.cfg.assets, self.cfg.window
                )));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape` using parameter leaves `vars`
    /// (from [`ParamSet::attach`]). The critic needs `action`, a `B x n` node.
    pub fn record(&self, tape: &mut Tape, vars: &[Var], states: &[&State], action: Option<Var>) -> Result<Var> {
        self.check_states(states)?;
        let batch = states.len();
        let h = self.cfg.hidden;
        let width = self.cfg.input_width();

        let mut seq: Vec<Var> = (0..self.cfg.window)
            .map(|step| {
                let mut data = Vec::with_capacity(batch * width);
                for s in states {
                    data.extend_from_slice(s.features.step_row(step));
                }
                tape.constant(batch, width, data)
            })
            .collect::<Result<_>>()?;

        for l in 0..self.cfg.gru_layers {
            let (w_x, w_h, b) = (vars[3 * l], vars[3 * l + 1], vars[3 * l + 2]);
            let mut state = tape.constant(batch, h, vec![0.0; batch * h])?;
            let mut outputs = Vec::with_capacity(seq.len());
            for x in &seq {
                let gx = tape.matmul(*x, w_x)?;
                let gx = tape.add_row(gx, b)?;
                let gh = tape.matmul(state, w_h)?;
                let gx_z = tape.slice_cols(gx, 0, h)?;
                let gx_r = tape.slice_cols(gx, h, 2 * h)?;
                let gx_n = tape.slice_cols(gx, 2 * h, 3 * h)?;
                let gh_z = tape.slice_cols(gh, 0, h)?;
                let gh_r = tape.slice_cols(gh, h, 2 * h)?;
                let gh_n = tape.slice_cols(gh, 2 * h, 3 * h)?;
                let z = tape.add(gx_z, gh_z)?;
                let z = tape.sigmoid(z);
                let r = tape.add(gx_r, gh_r)?;
                let r = tape.sigmoid(r);
                let rn = tape.mul(r, gh_n)?;
                let cand = tape.add(gx_n, rn)?;
                let cand = tape.tanh(cand);
                // h' = (1 - z) * cand + z * h
                let diff = tape.sub(state, cand)?;
                let keep = tape.mul(z, diff)?;
                state = tape.add(cand, keep)?;
                outputs.push(state);
            }
            seq = outputs;
        }
        let last = *seq.last().expect("window is positive");

        let n = self.cfg.assets;
        let mut held = Vec::with_capacity(batch * n);
        for s in states {
            held.extend_from_slice(s.weights.as_slice());
        }
        let held = tape.constant(batch, n, held)?;
        let joined = match (self.role, action) {
            (Role::Actor, _) => tape.concat(&[last, held])?,
            (Role::Critic, Some(a)) => {
                let (ar, ac) = (tape.value(a).rows(), tape.value(a).cols());
                if ar != batch || ac != n {
                    return Err(Error::Shape(format!("action batch {ar}x{ac}, expected {batch}x{n}")));
                }
                let scale = self.cfg.horizon as f64;
                let time = tape.constant(batch, 1, states.iter().map(|s| s.time_index as f64 / scale).collect())?;
                tape.concat(&[last, a, held, time])?
            }
            (Role::Critic, None) => return Err(Error::Shape("critic requires an action input".into())),
        };

        let k = 3 * self.cfg.gru_layers;
        let hidden = tape.matmul(joined, vars[k])?;
        let hidden = tape.add_row(hidden, vars[k + 1])?;
        let hidden = tape.leaky_relu(hidden, LEAKY_SLOPE);
        let out = tape.matmul(hidden, vars[k + 2])?;
        tape.add_row(out, vars[k + 3])
    }

    /// Raw action scores for each state, no gradients.
    pub fn actor_raw(&self, states: &[&State]) -> Result<Vec<Vec<f64>>> {
        if self.role != Role::Actor {
            return Err(Error::Shape("actor_raw called on a critic".into()));
        }
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let out = self.record(&mut tape, &vars, states, None)?;
        Ok(rows(tape.value(out)))
    }

    /// Quantiles for each (state, action) pair, no gradients.
    pub fn critic_quantiles(&self, states: &[&State], actions: &[&WeightVector]) -> Result<Vec<Vec<f64>>> {
        if self.role != Role::Critic {
            return Err(Error::Shape("critic_quantiles called on an actor".into()));
        }
        if actions.len() != states.len() {
            return Err(Error::Shape(format!("{} actions for {} states", actions.len(), states.len())));
        }
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let n = self.cfg.assets;
        let mut data = Vec::with_capacity(actions.len() * n);
        for a in actions {
            if a.len() != n {
                return Err(Error::Shape(format!("action has {} weights, expected {n}", a.len())));
            }
            data.extend_from_slice(a.as_slice());
        }
        let a = tape.constant(actions.len(), n, data)?;
        let out = self.record(&mut tape, &vars, states, Some(a))?;
        Ok(rows(tape.value(out)))
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.cols()).map(<[f64]>::to_vec).collect()
}

/// Records `w = delta * softmax(raw) - (delta - 1) / n` on the tape.
pub fn record_delta_transform(tape: &mut Tape, raw: Var, delta: f64) -> Var {
    let n = tape.value(raw).cols();
    let sa = tape.softmax_rows(raw);
    tape.affine(sa, delta, -(delta - 1.0) / n as f64)
}

/// `target <- tau * online + (1 - tau) * target`, tensor by tensor.
pub fn soft_update(target: &mut ParamSet, online: &ParamSet, tau: f64) -> Result<()> {
    if !target.same_layout(online) {
        return Err(Error::Shape("soft update between mismatched networks".into()));
    }
    for (t, o) in target.tensors_mut().iter_mut().zip(online.tensors()) {
        for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureBlock;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn cfg() -> NetConfig {
        NetConfig { assets: 3, window: 4, hidden: 5, gru_layers: 2, quantiles: 8, horizon: 52 }
    }

    fn state(seed: u64) -> State {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..3 * 4 * NUM_FEATURES).map(|_| rng.random_range(0.0..1.0)).collect();
        let block = FeatureBlock::from_raw(3, 4, data).unwrap();
        State::new(Arc::new(block), WeightVector::equal(3), 0).unwrap()
    }

    #[test]
    fn output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = Network::new(Role::Actor, cfg(), &mut rng).unwrap();
        let critic = Network::new(Role::Critic, cfg(), &mut rng).unwrap();
        let (s1, s2) = (state(1), state(2));
        let raw = actor.actor_raw(&[&s1, &s2]).unwrap();
        assert_eq!((raw.len(), raw[0].len()), (2, 3));
        let w = WeightVector::equal(3);
        let q = critic.critic_quantiles(&[&s1, &s2], &[&w, &w]).unwrap();
        assert_eq!((q.len(), q[0].len()), (2, 8));
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let actor = Network::new(Role::Actor, cfg(), &mut rng).unwrap();
        let (s1, s2) = (state(3), state(4));
        let both = actor.actor_raw(&[&s1, &s2]).unwrap();
        let alone = actor.actor_raw(&[&s2]).unwrap();
        for (a, b) in both[1].iter().zip(&alone[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_window_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let actor = Network::new(Role::Actor, cfg(), &mut rng).unwrap();
        let s = State::new(Arc::new(FeatureBlock::zeros(3, 5)), WeightVector::equal(3), 0).unwrap();
        assert!(actor.actor_raw(&[&s]).is_err());
    }

    fn zeroed(net: &Network) -> Network {
        let mut p = net.params().clone();
        p.map_values(|_| 0.0);
        Network::from_params(net.role(), *net.config(), p).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let actor = zeroed(&Network::new(Role::Actor, cfg(), &mut rng).unwrap());
        let critic = zeroed(&Network::new(Role::Critic, cfg(), &mut rng).unwrap());
        let s = state(7);
        assert_eq!(actor.actor_raw(&[&s]).unwrap()[0], vec![0.0; 3]);
        assert_eq!(critic.critic_quantiles(&[&s], &[&WeightVector::equal(3)]).unwrap()[0], vec![0.0; 8]);
    }

    #[test]
    fn single_quantile_critic_is_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = NetConfig { quantiles: 1, ..cfg() };
        let critic = Network::new(Role::Critic, c, &mut rng).unwrap();
        let s = state(9);
        assert_eq!(critic.critic_quantiles(&[&s], &[&WeightVector::equal(3)]).unwrap()[0].len(), 1);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let a = Network::new(Role::Actor, cfg(), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let b = Network::new(Role::Actor, cfg(), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let s = state(11);
        assert_eq!(a.actor_raw(&[&s]).unwrap(), b.actor_raw(&[&s]).unwrap());
    }

    #[test]
    fn one_unit_one_step_gru_by_hand() {
        let c = NetConfig { assets: 1, window: 1, hidden: 1, gru_layers: 1, quantiles: 1, horizon: 52 };
        let mut net = zeroed(&Network::new(Role::Actor, c, &mut ChaCha8Rng::seed_from_u64(12)).unwrap());
        let p = net.params_mut();
        // gates read only feature 0
        let w_x = p.get_mut("gru0.w_x").unwrap().data_mut();
        w_x[0] = 0.3; // z
        w_x[1] = -0.4; // r
        w_x[2] = 0.9; // candidate
        p.get_mut("gru0.w_h").unwrap().data_mut().copy_from_slice(&[0.5, 0.6, 0.7]);
        p.get_mut("gru0.b").unwrap().data_mut().copy_from_slice(&[0.1, -0.2, 0.05]);
        p.get_mut("dense.w").unwrap().data_mut().copy_from_slice(&[1.5, -2.0]);
        p.get_mut("dense.b").unwrap().data_mut()[0] = 0.2;
        p.get_mut("head.w").unwrap().data_mut()[0] = 0.8;
        p.get_mut("head.b").unwrap().data_mut()[0] = -0.1;

        let x = 0.7;
        let mut data = vec![0.0; NUM_FEATURES];
        data[0] = x;
        let s = State::new(Arc::new(FeatureBlock::from_raw(1, 1, data).unwrap()), WeightVector::equal(1), 0).unwrap();

        // h0 = 0, so every recurrent term vanishes except through the reset gate product
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z = sig(0.3 * x + 0.1);
        let _r = sig(-0.4 * x - 0.2);
        let cand = (0.9 * x + 0.05f64).tanh();
        let h = (1.0 - z) * cand;
        let pre = 1.5 * h - 2.0 * 1.0 + 0.2;
        let hidden = if pre > 0.0 { pre } else { 0.01 * pre };
        let expected = 0.8 * hidden - 0.1;
        let got = net.actor_raw(&[&s]).unwrap()[0][0];
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
    }

    #[test]
    fn dense_only_critic_by_hand() {
        let c = NetConfig { assets: 2, window: 1, hidden: 2, gru_layers: 1, quantiles: 2, horizon: 4 };
        let mut net = zeroed(&Network::new(Role::Critic, c, &mut ChaCha8Rng::seed_from_u64(13)).unwrap());
        // dense input: [h (2, zero), action (2), held (2), time (1)] -> 2 hidden units
        let w = [
            [0.0, 0.0],
            [0.0, 0.0],
            [1.0, -1.0],
            [0.5, 2.0],
            [-0.3, 0.4],
            [0.2, 0.1],
            [1.0, -3.0],
        ];
        let p = net.params_mut();
        p.get_mut("dense.w").unwrap().data_mut().copy_from_slice(&w.concat());
        p.get_mut("dense.b").unwrap().data_mut().copy_from_slice(&[0.1, -0.1]);
        p.get_mut("head.w").unwrap().data_mut().copy_from_slice(&[1.0, 2.0, -1.0, 0.5]);
        p.get_mut("head.b").unwrap().data_mut().copy_from_slice(&[0.0, 1.0]);
        let held = WeightVector::new(vec![0.25, 0.75]).unwrap();
        let action = WeightVector::new(vec![1.5, -0.5]).unwrap();
        let s = State::new(Arc::new(FeatureBlock::zeros(2, 1)), held, 2).unwrap();
        let input = [0.0, 0.0, 1.5, -0.5, 0.25, 0.75, 0.5];
        let mut hidden = [0.1, -0.1];
        for (i, x) in input.iter().enumerate() {
            hidden[0] += x * w[i][0];
            hidden[1] += x * w[i][1];
        }
        let hidden = hidden.map(|v| if v > 0.0 { v } else { 0.01 * v });
        let expected = [hidden[0] * 1.0 + hidden[1] * -1.0, hidden[0] * 2.0 + hidden[1] * 0.5 + 1.0];
        let got = net.critic_quantiles(&[&s], &[&action]).unwrap();
        for (g, e) in got[0].iter().zip(expected) {
            assert!((g - e).abs() < 1e-14, "{g} vs {e}");
        }
    }

    #[test]
    fn soft_update_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Network::new(Role::Actor, cfg(), &mut rng).unwrap();
        let b = Network::new(Role::Actor, cfg(), &mut rng).unwrap();
        let mut t = b.params().clone();
        soft_update(&mut t, a.params(), 0.0).unwrap();
        assert_eq!(t, *b.params());
        soft_update(&mut t, a.params(), 1.0).unwrap();
        assert_eq!(t, *a.params());
        let mut h = b.params().clone();
        soft_update(&mut h, a.params(), 0.5).unwrap();
        for ((x, y), z) in h.flat().iter().zip(a.params().flat()).zip(b.params().flat()) {
            assert!((x - 0.5 * (y + z)).abs() < 1e-15);
        }
    }

    #[test]
    fn from_params_checks_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Network::new(Role::Actor, cfg(), &mut rng).unwrap();
        assert!(Network::from_params(Role::Actor, cfg(), a.params().clone()).is_ok());
        assert!(Network::from_params(Role::Critic, cfg(), a.params().clone()).is_err());
    }
}
