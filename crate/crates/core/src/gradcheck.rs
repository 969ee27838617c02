//! Central finite-difference checks of the tape's reverse-mode gradients.
//!
//! Each primitive is checked on random inputs through the scalar
//! `sum(out * W)` for a random fixed `W`, so every output element carries a
//! distinct weight. The composites push the same check through whole actor
//! and critic graphs.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::action::WeightVector;
use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::critic::{utility_coefficients, RiskConfig};
use crate::data::{FeatureBlock, State, NUM_FEATURES};
use crate::error::Result;
use crate::nn::{record_delta_transform, NetConfig, Network, Role};
use crate::rng::{stream, StreamRng};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub passed: bool,
}

impl GradCheck {
    pub fn line(&self) -> String {
        format!(
            "{:<28} {:>6} coords  max rel err {:.3e}  {}",
            self.name,
            self.checked,
            self.max_rel_err,
            if self.passed { "ok" } else { "FAILED" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares the gradient returned by `f` at `x0` against central differences
/// of its value.
pub fn compare(name: &str, x0: &[f64], f: impl Fn(&[f64]) -> Result<(f64, Vec<f64>)>) -> Result<GradCheck> {
    let (_, analytic) = f(x0)?;
    let mut x = x0.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + STEP;
        let up = f(&x)?.0;
        x[i] = orig - STEP;
        let down = f(&x)?.0;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(GradCheck { name: name.to_string(), max_rel_err: worst, checked: x.len(), passed: worst <= TOLERANCE })
}

/// Values with magnitude in `[0.1, 1]` and random sign, away from the
/// leaky-ReLU kink.
fn away_from_zero(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    let mag = Uniform::new(0.1, 1.0).expect("valid range");
    (0..n).map(|_| if rng.random::<bool>() { mag.sample(rng) } else { -mag.sample(rng) }).collect()
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn check_primitive(name: &str, shapes: &[(usize, usize)], build: Build, rng: &mut StreamRng) -> Result<GradCheck> {
    let sizes: Vec<usize> = shapes.iter().map(|(r, c)| r * c).collect();
    let x0 = away_from_zero(rng, sizes.iter().sum());
    let split = |x: &[f64], tape: &mut Tape| -> Result<Vec<Var>> {
        let mut at = 0;
        let mut vars = Vec::new();
        for ((r, c), n) in shapes.iter().zip(&sizes) {
            vars.push(tape.leaf(Tensor::matrix(*r, *c, x[at..at + n].to_vec())?));
            at += n;
        }
        Ok(vars)
    };
    let out_len = {
        let mut tape = Tape::new();
        let vars = split(&x0, &mut tape)?;
        let out = build(&mut tape, &vars)?;
        tape.value(out).numel()
    };
    let weights = away_from_zero(rng, out_len);
    compare(name, &x0, |x| {
        let mut tape = Tape::new();
        let vars = split(x, &mut tape)?;
        let out = build(&mut tape, &vars)?;
        let (r, c) = (tape.value(out).rows(), tape.value(out).cols());
        let w = tape.constant(r, c, weights.clone())?;
        let prod = tape.mul(out, w)?;
        let root = tape.sum(prod);
        let value = tape.value(root).item();
        let grads = tape.backward(root)?;
        Ok((value, vars.iter().flat_map(|v| grads.wrt(*v)).collect()))
    })
}

/// Quantile-Huber inputs whose residuals sit clear of `0` and `+-kappa`.
fn huber_inputs(rng: &mut StreamRng, rows: usize, n: usize, m: usize, kappa: f64) -> (Vec<f64>, Vec<f64>) {
    loop {
        let theta = away_from_zero(rng, rows * n);
        let targets: Vec<f64> = away_from_zero(rng, rows * m).iter().map(|v| 2.0 * v).collect();
        let clear = (0..rows).all(|r| {
            theta[r * n..(r + 1) * n].iter().all(|t| {
                targets[r * m..(r + 1) * m].iter().all(|y| {
                    let u = (y - t).abs();
                    u > 1e-3 && (u - kappa).abs() > 1e-3
                })
            })
        });
        if clear {
            return (theta, targets);
        }
    }
}

/// One check per tape primitive.
pub fn primitive_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = stream(seed, "gradcheck", 0);
    let coeffs = away_from_zero(&mut rng, 4);
    let specs: Vec<(&str, Vec<(usize, usize)>, Build)> = vec![
        ("matmul", vec![(2, 3), (3, 4)], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![(2, 3), (2, 3)], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![(2, 3), (2, 3)], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![(2, 3), (2, 3)], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("add_row", vec![(3, 4), (1, 4)], Box::new(|t, v| t.add_row(v[0], v[1]))),
        ("sigmoid", vec![(2, 3)], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("tanh", vec![(2, 3)], Box::new(|t, v| Ok(t.tanh(v[0])))),
        ("leaky_relu", vec![(2, 3)], Box::new(|t, v| Ok(t.leaky_relu(v[0], 0.01)))),
        ("affine", vec![(2, 3)], Box::new(|t, v| Ok(t.affine(v[0], 2.5, -0.3)))),
        ("square", vec![(2, 3)], Box::new(|t, v| Ok(t.square(v[0])))),
        ("concat", vec![(2, 2), (2, 3), (2, 1)], Box::new(|t, v| t.concat(v))),
        ("slice_cols", vec![(2, 5)], Box::new(|t, v| t.slice_cols(v[0], 1, 4))),
        ("softmax_rows", vec![(3, 4)], Box::new(|t, v| Ok(t.softmax_rows(v[0])))),
        ("sum", vec![(2, 3)], Box::new(|t, v| Ok(t.sum(v[0])))),
        ("mean", vec![(2, 3)], Box::new(|t, v| Ok(t.mean(v[0])))),
        ("row_dot", vec![(3, 4)], Box::new(move |t, v| t.row_dot(v[0], coeffs.clone()))),
        ("delta_transform", vec![(2, 4)], Box::new(|t, v| Ok(record_delta_transform(t, v[0], 3.0)))),
    ];
    let mut out = Vec::new();
    for (name, shapes, build) in specs {
        out.push(check_primitive(name, &shapes, build, &mut rng)?);
    }

    let kappa = 0.7;
    let (theta, targets) = huber_inputs(&mut rng, 2, 4, 5, kappa);
    let weights = away_from_zero(&mut rng, 2);
    out.push(compare("quantile_huber", &theta, |x| {
        let mut tape = Tape::new();
        let th = tape.leaf(Tensor::matrix(2, 4, x.to_vec())?);
        let loss = tape.quantile_huber(th, targets.clone(), kappa)?;
        let w = tape.constant(2, 1, weights.clone())?;
        let prod = tape.mul(loss, w)?;
        let root = tape.sum(prod);
        let value = tape.value(root).item();
        Ok((value, tape.backward(root)?.wrt(th)))
    })?);
    Ok(out)
}

fn write_flat(params: &mut ParamSet, x: &[f64]) {
    let mut at = 0;
    for t in params.tensors_mut() {
        let n = t.numel();
        t.data_mut().copy_from_slice(&x[at..at + n]);
        at += n;
    }
}

fn random_states(rng: &mut StreamRng, cfg: &NetConfig, batch: usize) -> Result<Vec<State>> {
    (0..batch)
        .map(|b| {
            let data = away_from_zero(rng, cfg.assets * cfg.window * NUM_FEATURES);
            let raw: Vec<f64> = away_from_zero(rng, cfg.assets).iter().map(|v| v.abs()).collect();
            let total: f64 = raw.iter().sum();
            let weights = WeightVector::new(raw.iter().map(|v| v / total).collect())?;
            State::new(Arc::new(FeatureBlock::from_raw(cfg.assets, cfg.window, data)?), weights, b)
        })
        .collect()
}

/// Actor utility through the delta transform and the critic, differentiated
/// with respect to both parameter sets, and the critic's quantile-Huber loss
/// with respect to the critic.
pub fn composite_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let cfg = NetConfig { assets: 3, window: 2, hidden: 3, gru_layers: 2, quantiles: 4, horizon: 10 };
    let risk = RiskConfig { alpha: 0.75, zeta: 0.5, kappa: 0.7, gamma: 0.9 };
    let delta = 3.0;
    let actor = Network::new(Role::Actor, cfg, &mut stream(seed, "init", 0))?;
    let critic = Network::new(Role::Critic, cfg, &mut stream(seed, "init", 1))?;
    let mut rng = stream(seed, "gradcheck", 1);
    let states = random_states(&mut rng, &cfg, 2)?;
    let refs: Vec<&State> = states.iter().collect();
    let coeffs = utility_coefficients(cfg.quantiles, &risk)?;

    let utility = |a: &ParamSet, c: &ParamSet, wrt_actor: bool| -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let av = a.attach(&mut tape);
        let cv = c.attach(&mut tape);
        let raw = actor.record(&mut tape, &av, &refs, None)?;
        let w = record_delta_transform(&mut tape, raw, delta);
        let theta = critic.record(&mut tape, &cv, &refs, Some(w))?;
        let u = tape.row_dot(theta, coeffs.clone())?;
        let root = tape.mean(u);
        let value = tape.value(root).item();
        let grads = tape.backward(root)?;
        let vars = if wrt_actor { av } else { cv };
        Ok((value, vars.iter().flat_map(|v| grads.wrt(*v)).collect()))
    };

    let mut out = Vec::new();
    out.push(compare("actor utility / actor", &actor.params().flat(), |x| {
        let mut a = actor.params().clone();
        write_flat(&mut a, x);
        utility(&a, critic.params(), true)
    })?);
    out.push(compare("actor utility / critic", &critic.params().flat(), |x| {
        let mut c = critic.params().clone();
        write_flat(&mut c, x);
        utility(actor.params(), &c, false)
    })?);

    let actions: Vec<f64> = (0..2)
        .flat_map(|_| {
            let raw: Vec<f64> = away_from_zero(&mut rng, cfg.assets).iter().map(|v| v + 1.5).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(move |v| v / total)
        })
        .collect();
    let targets: Vec<f64> = away_from_zero(&mut rng, 2 * cfg.quantiles);
    out.push(compare("critic loss / critic", &critic.params().flat(), |x| {
        let mut c = critic.params().clone();
        write_flat(&mut c, x);
        let mut tape = Tape::new();
        let cv = c.attach(&mut tape);
        let a = tape.constant(2, cfg.assets, actions.clone())?;
        let theta = critic.record(&mut tape, &cv, &refs, Some(a))?;
        let per = tape.quantile_huber(theta, targets.clone(), risk.kappa)?;
        let root = tape.mean(per);
        let value = tape.value(root).item();
        let grads = tape.backward(root)?;
        Ok((value, cv.iter().flat_map(|v| grads.wrt(*v)).collect()))
    })?);
    Ok(out)
}

pub fn run_all(seed: u64) -> Result<Vec<GradCheck>> {
    let mut all = primitive_checks(seed)?;
    all.extend(composite_checks(seed)?);
    Ok(all)
}
