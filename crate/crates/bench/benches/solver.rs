use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use erasurenum::instances::parking_lot;
use erasurenum::{
    exact_error_probability, sim::simulate_flow_summary, solve_flow_rate, FlowProblem, SolverConfig, SpreadVector,
};
use erasurenum_bench::parking_lot_chain;

fn flow_rate(c: &mut Criterion) {
    let prob = FlowProblem {
        packet_symbols: 100,
        deadline: 8,
        erasure: 0.05,
        rate_min: 0.1,
        rate_max: 0.9,
        price: 2e-4,
    };
    c.bench_function("solve_flow_rate", |b| b.iter(|| solve_flow_rate(black_box(&prob), 1e-10)));
}

fn network(c: &mut Criterion) {
    let cfg = SolverConfig::default();
    let net = parking_lot(1e-3);
    c.bench_function("num_parking_lot", |b| b.iter(|| erasurenum::num::solve(black_box(&net), &cfg)));

    let mut group = c.benchmark_group("num_chain");
    for cells in [4, 16, 64] {
        let net = parking_lot_chain(cells, 4, 0.01);
        group.bench_with_input(BenchmarkId::from_parameter(cells), &net, |b, net| {
            b.iter(|| erasurenum::num::solve(net, &cfg))
        });
    }
    group.finish();
}

fn oracles(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_enumeration");
    for d in [8u32, 16, 20] {
        let phi = SpreadVector::uniform(d);
        group.bench_with_input(BenchmarkId::from_parameter(d), &phi, |b, phi| {
            b.iter(|| exact_error_probability(phi, 0.4, 0.1))
        });
    }
    for d in [8usize, 12, 16] {
        let raw: Vec<f64> = (1..=d).map(|i| i as f64).collect();
        let total: f64 = raw.iter().sum();
        let phi = SpreadVector::new(raw.iter().map(|w| w / total).collect()).unwrap();
        group.bench_with_input(BenchmarkId::new("ramp", d), &phi, |b, phi| {
            b.iter(|| exact_error_probability(phi, 0.4, 0.1))
        });
    }
    group.finish();

    let phi = SpreadVector::uniform(8);
    c.bench_function("simulate_100k_slots", |b| {
        b.iter(|| simulate_flow_summary(100, 0.1, &phi, 0.4, 100_000, black_box(7)))
    });
}

criterion_group!(benches, flow_rate, network, oracles);
criterion_main!(benches);
