//! Monte Carlo simulation of spread transmission over a slotted erasure channel.
//!
//! Slot erasures are drawn with ChaCha8 seeded through `seed_from_u64`, one
//! `gen_bool(beta)` per slot (per hop for [`simulate_hop_level`]). Packet `t`
//! occupies slots `t..t+D` and is decoded with the same [`DecodeRule`] the
//! exact enumeration uses.

use std::collections::VecDeque;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Result};
use crate::kernel::SpreadVector;
use crate::model::FlowSpec;
use crate::oracle::DecodeRule;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErasureTrace {
    pub slots: usize,
    /// One entry per slot.
    pub erasures: Vec<bool>,
    /// One entry per complete window, `true` when decoded.
    pub decodes: Vec<bool>,
    pub seed: u64,
}

impl ErasureTrace {
    /// `slot,erasure,decode`; the decode column is empty for the trailing
    /// slots that start no complete window.
    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "slot,erasure,decode")?;
        for (i, &e) in self.erasures.iter().enumerate() {
            match self.decodes.get(i) {
                Some(&d) => writeln!(out, "{i},{},{}", u8::from(e), u8::from(d))?,
                None => writeln!(out, "{i},{},", u8::from(e))?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSummary {
    pub packets: usize,
    pub failures: usize,
    pub error_rate: f64,
    pub throughput_per_slot: f64,
    /// `3 sqrt(p (1 - p) / n)`.
    pub ci_halfwidth: f64,
    /// 3 sigma including the sample autocovariance of overlapping windows.
    pub ci_halfwidth_windowed: f64,
    /// Fraction of slots erased.
    pub erasure_rate: f64,
}

/// Streaming failure statistics with lag products up to `D - 1`.
struct Tally {
    k: f64,
    packets: usize,
    failures: usize,
    recent: VecDeque<bool>,
    both: Vec<usize>,
    erased_slots: usize,
    slots: usize,
}

impl Tally {
    fn new(k: u32, deadline: usize) -> Self {
        Tally {
            k: f64::from(k),
            packets: 0,
            failures: 0,
            recent: VecDeque::with_capacity(deadline),
            both: vec![0; deadline],
            erased_slots: 0,
            slots: 0,
        }
    }

    fn push(&mut self, failed: bool) {
        self.packets += 1;
        if failed {
            self.failures += 1;
            for (lag, &prev) in self.recent.iter().rev().enumerate() {
                if prev {
                    self.both[lag + 1] += 1;
                }
            }
        }
        if self.both.len() > 1 {
            if self.recent.len() == self.both.len() - 1 {
                self.recent.pop_front();
            }
            self.recent.push_back(failed);
        }
    }

    fn summary(&self) -> SimSummary {
        let n = self.packets as f64;
        let p = self.failures as f64 / n;
        let base = p * (1.0 - p);
        let mut var = base;
        for lag in 1..self.both.len() {
            let pairs = self.packets.saturating_sub(lag);
            if pairs == 0 {
                continue;
            }
            let gamma = self.both[lag] as f64 / pairs as f64 - p * p;
            var += 2.0 * (1.0 - lag as f64 / n) * gamma;
        }
        SimSummary {
            packets: self.packets,
            failures: self.failures,
            error_rate: p,
            throughput_per_slot: self.k * (1.0 - p),
            ci_halfwidth: 3.0 * (base / n).sqrt(),
            ci_halfwidth_windowed: 3.0 * (var.max(0.0) / n).sqrt(),
            erasure_rate: self.erased_slots as f64 / self.slots as f64,
        }
    }
}

fn check(phi: &SpreadVector, rate: f64, slots: usize, probs: &[f64]) -> Result<DecodeRule> {
    if phi.len() > 64 {
        return Err(domain(format!("deadline {} > 64 not supported by the simulator", phi.len())));
    }
    if slots < phi.len() {
        return Err(domain(format!("need at least {} slots, got {slots}", phi.len())));
    }
    if let Some(b) = probs.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(domain(format!("erasure {b} outside [0, 1]")));
    }
    DecodeRule::new(phi, rate)
}

/// Runs the sliding-window decoder over `slots` slots, calling `erased` once per slot.
fn run(
    rule: &DecodeRule,
    k: u32,
    slots: usize,
    mut erased: impl FnMut() -> bool,
    mut keep: Option<&mut ErasureTrace>,
) -> SimSummary {
    let d = rule.deadline();
    let mut tally = Tally::new(k, d);
    let full = if d == 64 { u64::MAX } else { (1u64 << d) - 1 };
    // bit j is the slot j positions after the window start
    let mut window = 0u64;
    for slot in 0..slots {
        let e = erased();
        tally.slots += 1;
        tally.erased_slots += usize::from(e);
        if let Some(t) = keep.as_deref_mut() {
            t.erasures.push(e);
        }
        window >>= 1;
        if e {
            window |= 1 << (d - 1);
        }
        if slot + 1 >= d {
            let failed = rule.fails_mask(window & full);
            tally.push(failed);
            if let Some(t) = keep.as_deref_mut() {
                t.decodes.push(!failed);
            }
        }
    }
    tally.summary()
}

/// End-to-end simulation with per-slot erasure probability `erasure`.
pub fn simulate_flow(
    packet_symbols: u32,
    erasure: f64,
    phi: &SpreadVector,
    rate: f64,
    slots: usize,
    seed: u64,
) -> Result<(ErasureTrace, SimSummary)> {
    let rule = check(phi, rate, slots, &[erasure])?;
    let mut trace = ErasureTrace {
        slots,
        erasures: Vec::with_capacity(slots),
        decodes: Vec::with_capacity(slots + 1 - phi.len()),
        seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let summary = run(&rule, packet_symbols, slots, || rng.gen_bool(erasure), Some(&mut trace));
    Ok((trace, summary))
}

/// As [`simulate_flow`] without keeping the per-slot trace.
pub fn simulate_flow_summary(
    packet_symbols: u32,
    erasure: f64,
    phi: &SpreadVector,
    rate: f64,
    slots: usize,
    seed: u64,
) -> Result<SimSummary> {
    let rule = check(phi, rate, slots, &[erasure])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(run(&rule, packet_symbols, slots, || rng.gen_bool(erasure), None))
}

/// Draws every hop's erasure independently; a slot is lost if any hop loses it.
pub fn simulate_hop_level(
    flow: &FlowSpec,
    phi: &SpreadVector,
    rate: f64,
    slots: usize,
    seed: u64,
) -> Result<SimSummary> {
    let probs: Vec<f64> = flow.route.iter().map(|h| h.erasure_prob).collect();
    let rule = check(phi, rate, slots, &probs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = || probs.iter().fold(false, |lost, &b| rng.gen_bool(b) | lost);
    Ok(run(&rule, flow.packet_symbols, slots, draw, None))
}
