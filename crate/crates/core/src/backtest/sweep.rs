//! Train-and-evaluate sweeps over one hyper-parameter.

use std::fmt;
use std::str::FromStr;

use super::{evaluate_policy, metrics, MetricsReport};
use crate::data::Split;
use crate::error::{Error, Result};
use crate::learner::{train, TrainSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Delta,
    Zeta,
    Seed,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(SweepParam::Delta),
            "zeta" => Ok(SweepParam::Zeta),
            "seed" => Ok(SweepParam::Seed),
            other => Err(Error::invalid("param", format!("unknown sweep parameter `{other}` (delta, zeta, seed)"))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Delta => "delta",
            SweepParam::Zeta => "zeta",
            SweepParam::Seed => "seed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub metrics: MetricsReport,
    /// Average post-trade weight per asset over the evaluation run.
    pub mean_weights: Vec<f64>,
    /// Lowest and highest single weight chosen during evaluation.
    pub weight_range: (f64, f64),
}

impl SweepRow {
    pub fn csv_header(symbols: &[&str]) -> String {
        let mut h = format!("param,value,{}", MetricsReport::COLUMNS.join(","));
        for s in symbols {
            h.push_str(&format!(",w_{s}"));
        }
        h
    }

    pub fn csv_line(&self) -> String {
        let mut l = format!("{},{}", self.param, self.value);
        for v in self.metrics.values() {
            l.push_str(&format!(",{v}"));
        }
        for w in &self.mean_weights {
            l.push_str(&format!(",{w}"));
        }
        l
    }
}

/// For each value: copy `base`, set the parameter, train, evaluate on `test`.
pub fn sensitivity_sweep(base: &TrainSetup, test: Split, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&value| {
            let mut setup = base.clone();
            match param {
                SweepParam::Delta => setup.learner.delta = value,
                SweepParam::Zeta => setup.learner.risk.zeta = value,
                SweepParam::Seed => {
                    if value < 0.0 || value.fract() != 0.0 {
                        return Err(Error::invalid("seed", format!("seed values must be non-negative integers, got {value}")));
                    }
                    setup.seed = value as u64;
                }
            }
            let out = train(&setup, &mut |_| Ok(()))?;
            let curve = evaluate_policy(&out.state.actor, setup.learner.delta, &setup.market, test, &setup.env)?;
            let m = metrics(&curve, setup.market.risk_free(), setup.learner.risk.alpha)?;
            let decisions = &curve.points()[1..];
            let n = setup.market.assets();
            let mut mean_weights = vec![0.0; n];
            let mut range = (f64::INFINITY, f64::NEG_INFINITY);
            for p in decisions {
                for (i, w) in p.weights.iter().enumerate() {
                    mean_weights[i] += w / decisions.len() as f64;
                    range = (range.0.min(*w), range.1.max(*w));
                }
            }
            Ok(SweepRow { param, value, metrics: m, mean_weights, weight_range: range })
        })
        .collect()
}
