//! Ground truth by exhaustive enumeration: exact decode-failure probabilities,
//! window covariances, a direct 1-D minimizer for the Chernoff parameter and
//! a brute-force grid over spreads, parameters and rates.

use crate::error::{domain, Error, Result};
use crate::kernel::{chernoff_bound, ChannelPoint, SpreadVector};
use crate::model::NetworkSpec;

pub const MAX_ENUM_DEADLINE: usize = 24;

/// Tolerance band for threshold comparisons with non-uniform spreads.
pub const THRESHOLD_BAND: f64 = 1e-12;

/// Failure rule for one packet: fails iff `sum phi(d) E(d) > 1 - r`.
///
/// With the equal split the comparison is done on erasure counts, so ties
/// decode exactly; otherwise sums within [`THRESHOLD_BAND`] of the threshold
/// decode.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRule {
    weights: Vec<f64>,
    threshold: f64,
    max_erasures: Option<usize>,
}

impl DecodeRule {
    pub fn new(phi: &SpreadVector, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(domain(format!("rate {rate} outside (0, 1)")));
        }
        let d = phi.len();
        let threshold = 1.0 - rate;
        let max_erasures = phi
            .is_uniform()
            .then(|| ((threshold * d as f64) + 1e-9).floor() as usize);
        Ok(DecodeRule {
            weights: phi.weights().to_vec(),
            threshold,
            max_erasures,
        })
    }

    pub fn deadline(&self) -> usize {
        self.weights.len()
    }

    /// Largest tolerable erasure count, for the equal split.
    pub fn max_erasures(&self) -> Option<usize> {
        self.max_erasures
    }

    /// Bit `d` of `mask` marks an erasure in slot offset `d`.
    pub fn fails_mask(&self, mask: u64) -> bool {
        match self.max_erasures {
            Some(m) => mask.count_ones() as usize > m,
            None => self.weighted_sum(mask) > self.threshold + THRESHOLD_BAND,
        }
    }

    pub fn fails_window(&self, erased: impl IntoIterator<Item = bool>) -> bool {
        let mut mask = 0u64;
        for (d, e) in erased.into_iter().enumerate() {
            if e {
                mask |= 1 << d;
            }
        }
        self.fails_mask(mask)
    }

    fn weighted_sum(&self, mask: u64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .filter(|(d, _)| mask >> d & 1 == 1)
            .map(|(_, w)| w)
            .sum()
    }

    fn near_threshold(&self, mask: u64) -> bool {
        self.max_erasures.is_none() && (self.weighted_sum(mask) - self.threshold).abs() <= THRESHOLD_BAND
    }
}

fn check_erasure(erasure: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&erasure) {
        return Err(domain(format!("erasure {erasure} outside [0, 1]")));
    }
    Ok(())
}

fn binomial_pmf(n: usize, beta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut choose = 1.0f64;
    for m in 0..=n {
        if m > 0 {
            choose = choose * (n - m + 1) as f64 / m as f64;
        }
        out.push(choose * beta.powi(m as i32) * (1.0 - beta).powi((n - m) as i32));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactResult {
    pub probability: f64,
    /// Probability of patterns whose weighted sum lies within the tie band.
    pub near_threshold_mass: f64,
}

pub fn exact_error_probability(phi: &SpreadVector, rate: f64, erasure: f64) -> Result<f64> {
    Ok(exact_error_detail(phi, rate, erasure)?.probability)
}

pub fn exact_error_detail(phi: &SpreadVector, rate: f64, erasure: f64) -> Result<ExactResult> {
    let d = phi.len();
    if d > MAX_ENUM_DEADLINE {
        return Err(Error::TooLarge(format!("deadline {d} > {MAX_ENUM_DEADLINE}")));
    }
    check_erasure(erasure)?;
    let rule = DecodeRule::new(phi, rate)?;
    let pmf = binomial_pmf(d, erasure);

    if let Some(max) = rule.max_erasures {
        return Ok(ExactResult {
            probability: pmf[max + 1..].iter().sum::<f64>().min(1.0),
            near_threshold_mass: 0.0,
        });
    }

    // per-pattern probability depends only on the erasure count
    let per_pattern: Vec<f64> = (0..=d)
        .map(|m| erasure.powi(m as i32) * (1.0 - erasure).powi((d - m) as i32))
        .collect();
    let mut probability = 0.0;
    let mut near = 0.0;
    for mask in 0u64..(1 << d) {
        let w = per_pattern[mask.count_ones() as usize];
        if rule.fails_mask(mask) {
            probability += w;
        }
        if rule.near_threshold(mask) {
            near += w;
        }
    }
    Ok(ExactResult {
        probability: probability.min(1.0),
        near_threshold_mass: near,
    })
}

/// `Cov(fail_t, fail_{t+lag})` for i.i.d. Bernoulli(`erasure`) slots.
pub fn exact_window_covariance(phi: &SpreadVector, rate: f64, erasure: f64, lag: usize) -> Result<f64> {
    check_erasure(erasure)?;
    let rule = DecodeRule::new(phi, rate)?;
    let d = rule.deadline();
    if lag == 0 {
        let p = exact_error_probability(phi, rate, erasure)?;
        return Ok(p * (1.0 - p));
    }
    if lag >= d {
        return Ok(0.0);
    }
    let p = exact_error_probability(phi, rate, erasure)?;

    let joint = if let Some(max) = rule.max_erasures {
        let shared = binomial_pmf(d - lag, erasure);
        let own = binomial_pmf(lag, erasure);
        let mut acc = 0.0;
        for (s, ps) in shared.iter().enumerate() {
            let tail: f64 = own.iter().enumerate().filter(|(a, _)| s + a > max).map(|(_, q)| q).sum();
            acc += ps * tail * tail;
        }
        acc
    } else {
        let span = d + lag;
        if span > MAX_ENUM_DEADLINE {
            return Err(Error::TooLarge(format!("window span {span} > {MAX_ENUM_DEADLINE}")));
        }
        let window = (1u64 << d) - 1;
        let mut acc = 0.0;
        for mask in 0u64..(1 << span) {
            if rule.fails_mask(mask & window) && rule.fails_mask(mask >> lag & window) {
                let m = mask.count_ones() as i32;
                acc += erasure.powi(m) * (1.0 - erasure).powi(span as i32 - m);
            }
        }
        acc
    };
    Ok(joint - p * p)
}

/// Variance of the empirical failure rate over `packets` sliding windows.
pub fn exact_mean_variance(phi: &SpreadVector, rate: f64, erasure: f64, packets: usize) -> Result<f64> {
    if packets == 0 {
        return Err(domain("packets must be positive"));
    }
    let n = packets as f64;
    let mut acc = exact_window_covariance(phi, rate, erasure, 0)?;
    for lag in 1..phi.len().min(packets) {
        acc += 2.0 * (1.0 - lag as f64 / n) * exact_window_covariance(phi, rate, erasure, lag)?;
    }
    Ok(acc / n)
}

/// Minimizes the Chernoff bound over its parameter by bisection on the
/// derivative of the exponent, which is strictly decreasing.
pub fn minimize_bound_theta(phi: &SpreadVector, rate: f64, erasure: f64) -> Result<f64> {
    if !(erasure > 0.0 && erasure < 1.0 && rate > 0.0 && rate < 1.0 - erasure) {
        return Err(domain(format!("need 0 < rate < 1 - erasure, got r={rate}, beta={erasure}")));
    }
    let odds = (1.0 - erasure) / erasure;
    let slope = |theta: f64| {
        (1.0 - rate)
            - phi
                .weights()
                .iter()
                .map(|&w| w / (1.0 + odds * (-theta * w).exp()))
                .sum::<f64>()
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while slope(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Bracketing { expansions: 1000 });
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// All points of the `deadline`-simplex with coordinates on multiples of `mesh`.
pub fn simplex_grid(deadline: usize, mesh: f64) -> Result<Vec<SpreadVector>> {
    if deadline == 0 || !(mesh > 0.0 && mesh <= 1.0) {
        return Err(domain("need deadline >= 1 and 0 < mesh <= 1"));
    }
    let n = (1.0 / mesh - 1e-9).ceil() as usize;
    let mut out = Vec::new();
    let mut parts = vec![0usize; deadline];
    compositions(n, 0, &mut parts, &mut |p| {
        let w = p.iter().map(|&c| c as f64 / n as f64).collect();
        out.push(SpreadVector::new(w));
    });
    out.into_iter().collect()
}

fn compositions(left: usize, idx: usize, parts: &mut [usize], emit: &mut impl FnMut(&[usize])) {
    if idx + 1 == parts.len() {
        parts[idx] = left;
        emit(parts);
        return;
    }
    for c in 0..=left {
        parts[idx] = c;
        compositions(left - c, idx + 1, parts, emit);
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointGrid {
    pub rate_mesh: f64,
    pub phi_mesh: f64,
    pub theta_points: usize,
    pub theta_lo: f64,
    pub theta_hi: f64,
}

impl Default for JointGrid {
    fn default() -> Self {
        JointGrid {
            rate_mesh: 0.02,
            phi_mesh: 0.05,
            theta_points: 50,
            theta_lo: 1e-2,
            theta_hi: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub rates: Vec<f64>,
    pub phis: Vec<SpreadVector>,
    pub thetas: Vec<f64>,
    /// `sum ln(1 - bound)` at the best feasible point.
    pub utility: f64,
}

struct FlowGrid {
    rates: Vec<f64>,
    best: Vec<(f64, usize, f64)>,
    phis: Vec<SpreadVector>,
}

/// Exhaustive search over spread, parameter and rate grids under the airtime
/// limits. At most two flows with deadline at most 4.
pub fn grid_search_joint(net: &NetworkSpec, grid: &JointGrid) -> Result<GridOptimum> {
    if net.flows.len() > 2 || net.flows.is_empty() {
        return Err(Error::TooLarge(format!("{} flows (need 1 or 2)", net.flows.len())));
    }
    if let Some(f) = net.flows.iter().find(|f| f.deadline_slots > 4) {
        return Err(Error::TooLarge(format!("flow {} has deadline {}", f.id, f.deadline_slots)));
    }
    if !(grid.rate_mesh >= 0.01 && grid.phi_mesh >= 0.01) || grid.theta_points == 0 {
        return Err(domain("grid meshes must be >= 0.01"));
    }
    let thetas = log_grid(grid.theta_lo, grid.theta_hi, grid.theta_points);

    let mut flows = Vec::new();
    for f in &net.flows {
        let beta = f.end_to_end_erasure();
        let phis = simplex_grid(f.deadline_slots as usize, grid.phi_mesh)?;
        let mut rates = Vec::new();
        let mut j = 0;
        loop {
            let r = f.rate_min + j as f64 * grid.rate_mesh;
            if r > f.rate_max + 1e-12 || r >= 1.0 - beta || r >= 1.0 {
                break;
            }
            rates.push(r);
            j += 1;
        }
        let mut best = Vec::with_capacity(rates.len());
        for &r in &rates {
            let base = ChannelPoint::new(r, beta, f.deadline_slots)?;
            let mut top = (f64::NEG_INFINITY, 0, thetas[0]);
            for (pi, phi) in phis.iter().enumerate() {
                for &t in &thetas {
                    let b = chernoff_bound(phi, &base.with_theta(t)?)?;
                    if b < 1.0 {
                        let u = (-b).ln_1p();
                        if u > top.0 {
                            top = (u, pi, t);
                        }
                    }
                }
            }
            best.push(top);
        }
        flows.push(FlowGrid { rates, best, phis });
    }

    let fits = |choice: &[usize]| {
        net.cells.iter().all(|c| {
            let demand: f64 = net
                .flows
                .iter()
                .zip(&flows)
                .zip(choice)
                .filter_map(|((f, g), &j)| {
                    f.hop_in(&c.id)
                        .map(|h| f64::from(f.packet_symbols) / (g.rates[j] * h.phy_rate))
                })
                .sum();
            demand <= c.period * (1.0 + 1e-12)
        })
    };

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut consider = |choice: Vec<usize>| {
        if !fits(&choice) {
            return;
        }
        let u: f64 = choice.iter().zip(&flows).map(|(&j, g)| g.best[j].0).sum();
        if best.as_ref().is_none_or(|(b, _)| u > *b) {
            best = Some((u, choice));
        }
    };
    match flows.len() {
        1 => (0..flows[0].rates.len()).for_each(|a| consider(vec![a])),
        _ => {
            for a in 0..flows[0].rates.len() {
                for b in 0..flows[1].rates.len() {
                    consider(vec![a, b]);
                }
            }
        }
    }

    let (utility, choice) = best.ok_or_else(|| Error::Infeasible("no feasible grid point".into()))?;
    Ok(GridOptimum {
        rates: choice.iter().zip(&flows).map(|(&j, g)| g.rates[j]).collect(),
        phis: choice.iter().zip(&flows).map(|(&j, g)| g.phis[g.best[j].1].clone()).collect(),
        thetas: choice.iter().zip(&flows).map(|(&j, g)| g.best[j].2).collect(),
        utility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{single_ample, single_tight};
    use crate::kernel::{optimal_theta, ChannelPoint};
    use approx::assert_relative_eq;

    fn spread(w: &[f64]) -> SpreadVector {
        SpreadVector::new(w.to_vec()).unwrap()
    }

    #[test]
    fn single_slot_is_beta() {
        for &r in &[0.1, 0.5, 0.99] {
            assert_eq!(exact_error_probability(&spread(&[1.0]), r, 0.3).unwrap(), 0.3);
        }
    }

    #[test]
    fn two_slot_hand_example() {
        let p = exact_error_probability(&spread(&[0.5, 0.5]), 0.4, 0.1).unwrap();
        assert_relative_eq!(p, 0.01, max_relative = 1e-14);
        let p = exact_error_probability(&spread(&[0.6, 0.4]), 0.4, 0.1).unwrap();
        assert_relative_eq!(p, 0.01, max_relative = 1e-14);
    }

    #[test]
    fn lossless_is_zero() {
        assert_eq!(exact_error_probability(&spread(&[0.2, 0.3, 0.5]), 0.3, 0.0).unwrap(), 0.0);
        assert_eq!(exact_error_probability(&SpreadVector::uniform(7), 0.3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn ties_decode() {
        // one erasure of two at rate 1/2 sits exactly on the threshold
        let p = exact_error_probability(&SpreadVector::uniform(2), 0.5, 0.1).unwrap();
        assert_relative_eq!(p, 0.01, max_relative = 1e-14);
        let d = exact_error_detail(&spread(&[0.5, 0.25, 0.25]), 0.5, 0.1).unwrap();
        assert!(d.near_threshold_mass > 0.0);
    }

    #[test]
    fn uniform_counting_matches_mask_enumeration() {
        let uniform = SpreadVector::uniform(6);
        let nearly = spread(&[1.0 / 6.0 + 1e-15, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0 - 1e-15]);
        for &r in &[0.12, 0.37, 0.61] {
            let a = exact_error_probability(&uniform, r, 0.2).unwrap();
            let b = exact_error_probability(&nearly, r, 0.2).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn too_large() {
        assert!(matches!(
            exact_error_probability(&SpreadVector::uniform(25), 0.5, 0.1),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn covariance_vanishes_beyond_window() {
        let phi = SpreadVector::uniform(3);
        assert_eq!(exact_window_covariance(&phi, 0.5, 0.2, 3).unwrap(), 0.0);
        assert!(exact_window_covariance(&phi, 0.5, 0.2, 1).unwrap() > 0.0);
    }

    #[test]
    fn covariance_counting_matches_enumeration() {
        let phi = SpreadVector::uniform(4);
        let skew = spread(&[0.25 + 1e-14, 0.25, 0.25, 0.25 - 1e-14]);
        for lag in 1..4 {
            let a = exact_window_covariance(&phi, 0.45, 0.3, lag).unwrap();
            let b = exact_window_covariance(&skew, 0.45, 0.3, lag).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
    }

    #[test]
    fn theta_minimizer_matches_closed_form() {
        let phi = SpreadVector::uniform(5);
        let t = minimize_bound_theta(&phi, 0.4, 0.1).unwrap();
        let closed = optimal_theta(&ChannelPoint::new(0.4, 0.1, 5).unwrap()).unwrap();
        assert_relative_eq!(t, closed, max_relative = 1e-10);
    }

    #[test]
    fn simplex_grid_sizes() {
        assert_eq!(simplex_grid(1, 0.05).unwrap().len(), 1);
        assert_eq!(simplex_grid(2, 0.05).unwrap().len(), 21);
        assert_eq!(simplex_grid(4, 0.05).unwrap().len(), 1771);
    }

    #[test]
    fn grid_capacity_slack_sits_at_rate_min() {
        let best = grid_search_joint(&single_ample(), &JointGrid::default()).unwrap();
        assert_eq!(best.rates, vec![0.1]);
    }

    #[test]
    fn grid_single_flow_d2() {
        let mut net = single_tight();
        net.flows[0].deadline_slots = 2;
        let best = grid_search_joint(&net, &JointGrid::default()).unwrap();
        let w = best.phis[0].weights();
        assert!((w[0] - 0.5).abs() <= 0.05 + 1e-12, "{w:?}");
        let closed = optimal_theta(&ChannelPoint::new(best.rates[0], 0.05, 2).unwrap()).unwrap();
        assert!((best.thetas[0] / closed - 1.0).abs() <= 0.15, "{} vs {closed}", best.thetas[0]);
    }

    #[test]
    fn grid_rejects_large_instances() {
        let mut net = single_tight();
        net.flows[0].deadline_slots = 5;
        assert!(matches!(grid_search_joint(&net, &JointGrid::default()), Err(Error::TooLarge(_))));
        let net = crate::instances::parking_lot(0.1);
        assert!(matches!(grid_search_joint(&net, &JointGrid::default()), Err(Error::TooLarge(_))));
    }
}
