//! Plain-text parameter checkpoints.
//!
//! ```text
//! R3L-CHECKPOINT v1
//! meta <key> <value>
//! tensor <name> <rank> <dim>...
//! <values, whitespace separated>
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::nn::{NetConfig, Network, Role};

const MAGIC: &str = "R3L-CHECKPOINT v1";

/// Online and target networks plus the update count they were saved at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: NetConfig,
    pub updates: u64,
    pub actor: ParamSet,
    pub critic: ParamSet,
    pub target_actor: ParamSet,
    pub target_critic: ParamSet,
}

const GROUPS: [&str; 4] = ["actor", "critic", "target_actor", "target_critic"];

impl Checkpoint {
    pub fn actor_network(&self) -> Result<Network> {
        Network::from_params(Role::Actor, self.net, self.actor.clone())
    }

    pub fn critic_network(&self) -> Result<Network> {
        Network::from_params(Role::Critic, self.net, self.critic.clone())
    }

    fn groups(&self) -> [&ParamSet; 4] {
        [&self.actor, &self.critic, &self.target_actor, &self.target_critic]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let n = &self.net;
        let _ = writeln!(out, "{MAGIC}");
        for (k, v) in [
            ("assets", n.assets as u64),
            ("window", n.window as u64),
            ("hidden", n.hidden as u64),
            ("gru_layers", n.gru_layers as u64),
            ("quantiles", n.quantiles as u64),
            ("horizon", n.horizon as u64),
            ("updates", self.updates),
        ] {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (group, params) in GROUPS.iter().zip(self.groups()) {
            for (name, t) in params.names().iter().zip(params.tensors()) {
                let _ = write!(out, "tensor {group}.{name} {}", t.shape().len());
                for d in t.shape() {
                    let _ = write!(out, " {d}");
                }
                out.push('\n');
                let vals: Vec<String> = t.data().iter().map(|v| format!("{v:e}")).collect();
                out.push_str(&vals.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("missing header".into()));
        }
        let mut meta = std::collections::HashMap::new();
        let mut sets: [ParamSet; 4] = Default::default();
        while let Some(line) = lines.next() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| bad("meta without key".into()))?;
                    let val: u64 = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(format!("bad meta value for {key}")))?;
                    meta.insert(key.to_string(), val);
                }
                Some("tensor") => {
                    let full = parts.next().ok_or_else(|| bad("tensor without name".into()))?;
                    let (group, name) = full.split_once('.').ok_or_else(|| bad(format!("bad tensor name {full}")))?;
                    let slot = GROUPS.iter().position(|g| *g == group).ok_or_else(|| bad(format!("unknown group {group}")))?;
                    let rank: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(format!("bad rank for {full}")))?;
                    let dims: Vec<usize> = parts.map(|d| d.parse().map_err(|_| bad(format!("bad dim for {full}")))).collect::<Result<_>>()?;
                    if dims.len() != rank {
                        return Err(bad(format!("{full}: rank {rank} with {} dims", dims.len())));
                    }
                    let values: Vec<f64> = lines
                        .next()
                        .ok_or_else(|| bad(format!("{full}: missing values")))?
                        .split_whitespace()
                        .map(|v| v.parse().map_err(|_| bad(format!("{full}: bad value {v}"))))
                        .collect::<Result<_>>()?;
                    let t = Tensor::new(dims, values).map_err(|e| bad(format!("{full}: {e}")))?;
                    sets[slot].push(name, t);
                }
                Some(other) => return Err(bad(format!("unexpected line start {other}"))),
                None => {}
            }
        }
        let get = |k: &str| meta.get(k).copied().ok_or_else(|| bad(format!("missing meta {k}")));
        let net = NetConfig {
            assets: get("assets")? as usize,
            window: get("window")? as usize,
            hidden: get("hidden")? as usize,
            gru_layers: get("gru_layers")? as usize,
            quantiles: get("quantiles")? as usize,
            horizon: get("horizon")? as usize,
        };
        let [actor, critic, target_actor, target_critic] = sets;
        let ck = Checkpoint { net, updates: get("updates")?, actor, critic, target_actor, target_critic };
        // layout check against a fresh network of the declared shape
        for (role, p) in [(Role::Actor, &ck.actor), (Role::Critic, &ck.critic), (Role::Actor, &ck.target_actor), (Role::Critic, &ck.target_critic)] {
            Network::from_params(role, net, p.clone()).map_err(|e| bad(e.to_string()))?;
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let net = NetConfig { assets: 3, window: 2, hidden: 4, gru_layers: 2, quantiles: 8, horizon: 52 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Network::new(Role::Actor, net, &mut rng).unwrap();
        let c = Network::new(Role::Critic, net, &mut rng).unwrap();
        Checkpoint {
            net,
            updates: 17,
            actor: a.params().clone(),
            critic: c.params().clone(),
            target_actor: a.params().clone(),
            target_critic: c.params().clone(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let text = ck.to_text();
        let back = Checkpoint::from_text(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn corrupted_input_rejected() {
        let text = sample().to_text();
        assert!(Checkpoint::from_text("nope").is_err());
        assert!(Checkpoint::from_text(&text.replace("tensor actor.head.b 2 1 3", "tensor actor.head.b 2 1 4")).is_err());
        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::from_text(&truncated).is_err());
    }
}
