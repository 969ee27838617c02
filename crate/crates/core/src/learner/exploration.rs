//! Clipped Gaussian exploration noise with exponential decay.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub sigma0: f64,
    /// Multiplicative decay per parameter update.
    pub decay: f64,
    pub clip: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        ExplorationSchedule { sigma0: 0.2, decay: 0.9999, clip: 0.5 }
    }
}

impl ExplorationSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return Err(Error::invalid("sigma0", "must be finite and >= 0"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid("sigma_decay", "must be in (0, 1]"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::invalid("noise_clip", "must be > 0"));
        }
        Ok(())
    }

    pub fn sigma(&self, updates: u64) -> f64 {
        self.sigma0 * self.decay.powf(updates as f64)
    }

    /// One draw of `clip(N(0, sigma), -c, c)`; exactly zero when `sigma` is zero.
    pub fn noise<R: Rng>(&self, sigma: f64, rng: &mut R) -> f64 {
        if sigma <= 0.0 {
            return 0.0;
        }
        let e: f64 = Normal::new(0.0, sigma).expect("sigma > 0").sample(rng);
        e.clamp(-self.clip, self.clip)
    }
}
