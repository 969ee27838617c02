use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use r3l_bench::{learner_and_batch, setup};
use r3l_core::critic::{quantile_huber_grad, quantile_huber_loss};
use r3l_core::portfolio::rebalance;
use r3l_core::{action_to_weights, PortfolioState, RawAction, Transition, WeightVector};

fn action_map(c: &mut Criterion) {
    let raw = RawAction((0..30).map(|i| (i as f64 * 0.37).sin()).collect());
    c.bench_function("action_to_weights n=30", |b| b.iter(|| action_to_weights(black_box(&raw), 3.0).unwrap()));
}

fn rebalancing(c: &mut Criterion) {
    let from = WeightVector::new(vec![0.5, 0.3, -0.1, 0.3]).unwrap();
    let to = WeightVector::new(vec![-0.2, 0.6, 0.4, 0.2]).unwrap();
    let p = PortfolioState::new(10_000.0, from, vec![10.0, 25.0, 40.0, 1.0]).unwrap();
    c.bench_function("rebalance n=4", |b| b.iter(|| rebalance(black_box(&p), black_box(&to), 0.002, 0.002).unwrap()));
}

fn quantile_loss(c: &mut Criterion) {
    let mut g = c.benchmark_group("quantile_huber");
    for n in [32usize, 200] {
        let theta: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
        let target: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
        g.bench_with_input(BenchmarkId::new("loss", n), &n, |b, _| b.iter(|| quantile_huber_loss(&theta, &target, 1.0)));
        g.bench_with_input(BenchmarkId::new("grad", n), &n, |b, _| b.iter(|| quantile_huber_grad(&theta, &target, 1.0)));
    }
    g.finish();
}

fn learner_update(c: &mut Criterion) {
    let mut g = c.benchmark_group("learner");
    g.sample_size(10);
    for (window, hidden, quantiles) in [(16usize, 16usize, 40usize), (60, 64, 200)] {
        let s = setup(3, window, hidden, quantiles);
        let (ls, transitions) = learner_and_batch(&s, 32);
        let batch: Vec<&Transition> = transitions.iter().collect();
        let label = format!("h{window}_H{hidden}_N{quantiles}");
        g.bench_function(BenchmarkId::new("update_batch32", &label), |b| {
            b.iter_batched(|| ls.clone(), |mut l| l.update(&batch, &s.learner).unwrap(), criterion::BatchSize::LargeInput)
        });
        let states: Vec<_> = transitions.iter().map(|t| t.state.as_ref()).collect();
        g.bench_function(BenchmarkId::new("actor_forward_batch32", &label), |b| b.iter(|| ls.actor.actor_raw(&states).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, action_map, rebalancing, quantile_loss, learner_update);
criterion_main!(benches);
