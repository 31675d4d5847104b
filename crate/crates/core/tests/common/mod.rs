#![allow(dead_code)]

use std::io::Write;

use erasurenum::instances::{parking_lot, single_ample, single_tight, two_cell_unequal};
use erasurenum::{CellSpec, FlowSpec, HopSpec, NetworkSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point on the simplex.
pub fn random_simplex(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = w[..d - 1].iter().sum();
    w[d - 1] = (1.0 - head).max(0.0);
    w
}

pub fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Random three-cell network with four flows; periods are stretched until it validates.
pub fn random_network(seed: u64) -> NetworkSpec {
    let mut rng = rng(seed);
    let cells: Vec<CellSpec> = (0..3)
        .map(|i| CellSpec {
            id: format!("c{i}"),
            period: rng.gen_range(0.5..2.0),
        })
        .collect();
    let flows = (0..4)
        .map(|i| {
            let hops = rng.gen_range(1..=3);
            let mut ids: Vec<usize> = (0..3).collect();
            for j in 0..3 {
                ids.swap(j, rng.gen_range(j..3));
            }
            let route: Vec<HopSpec> = ids[..hops]
                .iter()
                .map(|&c| HopSpec {
                    cell: format!("c{c}"),
                    phy_rate: rng.gen_range(500.0..2000.0),
                    erasure_prob: log_uniform(&mut rng, 1e-3, 0.1),
                })
                .collect();
            let beta = 1.0 - route.iter().map(|h| 1.0 - h.erasure_prob).product::<f64>();
            FlowSpec {
                id: format!("f{i}"),
                packet_symbols: rng.gen_range(20..200),
                deadline_slots: rng.gen_range(1..=8),
                route,
                rate_min: 0.05,
                rate_max: (0.9f64).min(1.0 - beta - 0.01),
            }
        })
        .collect();
    let mut net = NetworkSpec { cells, flows };
    while !net.validate().is_empty() {
        for c in &mut net.cells {
            c.period *= 1.5;
        }
    }
    net
}

/// Every instance the solver-level checks run on.
pub fn solver_suite() -> Vec<(String, NetworkSpec)> {
    let mut out = Vec::new();
    for beta in [0.1, 0.05, 0.01, 0.001] {
        out.push((format!("parking_lot({beta})"), parking_lot(beta)));
        out.push((format!("two_cell_unequal({beta})"), two_cell_unequal(beta)));
    }
    out.push(("single_tight".into(), single_tight()));
    out.push(("single_ample".into(), single_ample()));
    for seed in 0..12 {
        out.push((format!("random({seed})"), random_network(seed)));
    }
    out
}

/// Writes straight to stderr so the line shows even when output is captured.
pub fn report(criterion: u32, pass: bool, what: &str, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion:>2} {status}: {what} ({detail})");
}
