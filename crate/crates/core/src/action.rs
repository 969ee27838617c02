//! Mapping raw actor outputs to self-financing portfolio weights.
//!
//! `softmax` puts the raw vector on the simplex, then the delta transform
//! `w_i = sa_i * delta - (delta - 1) / n` stretches it so weights still sum to
//! one but individual entries may go negative (short positions). Per-asset
//! bounds are the open interval `(-(delta-1)/n, delta - (delta-1)/n)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUM_TOLERANCE: f64 = 1e-9;

/// Unconstrained actor output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAction(pub Vec<f64>);

impl RawAction {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Portfolio weights summing to one (within [`SUM_TOLERANCE`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("weights", "empty weight vector"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights", "non-finite weight"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid("weights", format!("weights sum to {sum}, expected 1")));
        }
        Ok(WeightVector(weights))
    }

    pub fn equal(n: usize) -> Self {
        WeightVector(vec![1.0 / n as f64; n])
    }

    /// Everything in asset `index` (the risk-free slot when it is the last asset).
    pub fn all_in(n: usize, index: usize) -> Self {
        let mut w = vec![0.0; n];
        w[index] = 1.0;
        WeightVector(w)
    }

    pub(crate) fn from_vec_unchecked(weights: Vec<f64>) -> Self {
        WeightVector(weights)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Open per-asset bounds of the delta transform for `n` assets.
pub fn weight_bounds(delta: f64, n: usize) -> (f64, f64) {
    let shift = (delta - 1.0) / n as f64;
    (-shift, delta - shift)
}

pub fn softmax(raw: &RawAction) -> Vec<f64> {
    softmax_slice(&raw.0)
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn delta_transform(sa: &[f64], delta: f64) -> Result<WeightVector> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::invalid("delta", format!("must be a finite value >= 0, got {delta}")));
    }
    if sa.is_empty() {
        return Err(Error::invalid("sa", "empty simplex vector"));
    }
    let n = sa.len() as f64;
    let shift = (delta - 1.0) / n;
    WeightVector::new(sa.iter().map(|s| s * delta - shift).collect())
}

pub fn action_to_weights(raw: &RawAction, delta: f64) -> Result<WeightVector> {
    if raw.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("raw", "non-finite actor output"));
    }
    delta_transform(&softmax(raw), delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_is_uniform() {
        let sa = softmax(&RawAction(vec![0.0; 5]));
        for v in sa {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let x = vec![0.3, -1.2, 2.0, 0.0];
        let a = softmax(&RawAction(x.clone()));
        let b = softmax(&RawAction(x.iter().map(|v| v + 7.5).collect()));
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_one_hot_by_hand() {
        let e = std::f64::consts::E;
        let sa = softmax(&RawAction(vec![1.0, 0.0, 0.0, 0.0, 0.0]));
        assert!((sa[0] - e / (e + 4.0)).abs() < 1e-15);
        for v in &sa[1..] {
            assert!((v - 1.0 / (e + 4.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_inputs_do_not_overflow() {
        let sa = softmax(&RawAction(vec![1000.0, 999.0]));
        assert!(sa.iter().all(|v| v.is_finite()));
        assert!((sa.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn delta_three_five_assets_range() {
        // extreme simplex corners approach but never reach -0.4 / 2.6
        let (lo, hi) = weight_bounds(3.0, 5);
        assert!((lo + 0.4).abs() < 1e-15 && (hi - 2.6).abs() < 1e-15);
        let w = action_to_weights(&RawAction(vec![5.0, -5.0, -5.0, -5.0, -5.0]), 3.0).unwrap();
        for &x in w.as_slice() {
            assert!(x > -0.4 && x < 2.6);
        }
        // saturated scores land on the bounds to within rounding
        let w = action_to_weights(&RawAction(vec![30.0, -30.0, -30.0, -30.0, -30.0]), 3.0).unwrap();
        assert!((w[0] - 2.6).abs() < 1e-12 && (w[1] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn delta_one_is_identity_and_zero_is_uniform() {
        let sa = softmax(&RawAction(vec![0.5, -0.1, 1.3]));
        let w1 = delta_transform(&sa, 1.0).unwrap();
        assert_eq!(w1.as_slice(), sa.as_slice());
        let w0 = delta_transform(&sa, 0.0).unwrap();
        for &x in w0.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_delta_rejected() {
        assert!(delta_transform(&[0.5, 0.5], -0.1).is_err());
    }

    #[test]
    fn equal_raw_gives_equal_weights() {
        for delta in [0.0, 1.0, 3.0, 9.0] {
            let w = action_to_weights(&RawAction(vec![2.5; 4]), delta).unwrap();
            for &x in w.as_slice() {
                assert!((x - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn seeded_sweep_keeps_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(2..8);
            let delta = rng.random_range(0.0..10.0);
            let raw = RawAction((0..n).map(|_| rng.random_range(-5.0..5.0)).collect());
            let w = action_to_weights(&raw, delta).unwrap();
            let (lo, hi) = weight_bounds(delta, n);
            assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
            // at delta == 1 softmax saturates to 0 for extreme spreads; bounds are open in exact arithmetic
            assert!(w.as_slice().iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
        }
    }

    proptest! {
        #[test]
        fn order_preserving(raw in proptest::collection::vec(-10.0f64..10.0, 2..7), delta in 0.01f64..15.0) {
            let w = action_to_weights(&RawAction(raw.clone()), delta).unwrap();
            for i in 0..raw.len() {
                for j in 0..raw.len() {
                    if raw[i] > raw[j] + 1e-9 {
                        prop_assert!(w[i] >= w[j]);
                    }
                }
            }
        }

        #[test]
        fn short_mass_bounded(raw in proptest::collection::vec(-10.0f64..10.0, 2..7), delta in 1.0f64..15.0) {
            let n = raw.len();
            let w = action_to_weights(&RawAction(raw), delta).unwrap();
            let short: f64 = w.as_slice().iter().filter(|&&x| x < 0.0).sum();
            prop_assert!(short >= -((n - 1) as f64) * (delta - 1.0) / n as f64 - 1e-12);
        }
    }
}
