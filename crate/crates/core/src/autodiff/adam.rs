use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected ADAM update in place. `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// ADAM state for a whole parameter set (descent direction).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam { cfg, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Minimizes: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!("{} gradients for {} tensors", grads.len(), params.len())));
        }
        self.t += 1;
        let c = self.cfg;
        for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
            if grads[i].len() != tensor.numel() {
                return Err(Error::Shape(format!("gradient {i} has wrong length")));
            }
            adam_step(tensor.data_mut(), &grads[i], &mut self.m[i], &mut self.v[i], c.lr, c.beta1, c.beta2, c.eps, self.t);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = vec![1.5, -2.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_step(&mut p, &[0.0, 0.0], &mut m, &mut v, 0.1, 0.9, 0.999, 1e-8, 1);
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.0, -0.02, 1e3] {
            let mut p = vec![0.0];
            let (mut m, mut v) = (vec![0.0], vec![0.0]);
            adam_step(&mut p, &[g], &mut m, &mut v, 0.01, 0.9, 0.999, 1e-8, 1);
            assert!((p[0] + 0.01 * f64::signum(g)).abs() < 1e-8, "{g}: {}", p[0]);
        }
    }

    #[test]
    fn three_steps_on_quadratic_match_scalar_trace() {
        // f(x) = (x - 2)^2, x0 = 0, lr 0.1: scalar reference written out longhand
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut x_ref = 0.0f64;
        let (mut m_ref, mut v_ref) = (0.0f64, 0.0f64);
        let mut trace = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * (x_ref - 2.0);
            m_ref = b1 * m_ref + (1.0 - b1) * g;
            v_ref = b2 * v_ref + (1.0 - b2) * g * g;
            let mh = m_ref / (1.0 - b1.powi(t));
            let vh = v_ref / (1.0 - b2.powi(t));
            x_ref -= lr * mh / (vh.sqrt() + eps);
            trace.push(x_ref);
        }
        let mut x = vec![0.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        for (t, expected) in trace.iter().enumerate() {
            let g = [2.0 * (x[0] - 2.0)];
            adam_step(&mut x, &g, &mut m, &mut v, lr, b1, b2, eps, t as u64 + 1);
            assert!((x[0] - expected).abs() < 1e-15);
        }
        // frozen values of the same trace
        assert!((trace[0] - 0.1).abs() < 1e-9);
        assert!(trace[2] > trace[1] && trace[1] > trace[0]);
    }
}
