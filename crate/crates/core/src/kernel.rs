//! Per-flow error kernel.
//!
//! A coded packet of `n = k/r` symbols is spread over `D` consecutive slots with
//! weights `phi`; it fails to decode when the erased share exceeds `1 - r`. The
//! Chernoff bound on that event, with `theta` as the tilting parameter, is
//!
//! ```text
//! e(phi, theta, r) = exp(-[theta (1 - r) - sum_d ln(1 - beta + beta exp(theta phi_d))])
//! ```
//!
//! Minimising over the simplex gives the equal split, and minimising over
//! `theta` gives a closed form whose bound collapses to
//! `exp(-D KL(Bern(1 - r) || Bern(beta)))`.

use crate::error::{domain, Error, Result};

/// Numerical stand-in for the open endpoints of `(0, 1 - beta)`.
pub const ENDPOINT_EPS: f64 = 1e-9;

const SIMPLEX_TOL: f64 = 1e-12;

/// Allocation of a coded packet's symbols across the `D` slots of its window.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadVector {
    weights: Vec<f64>,
}

impl SpreadVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(domain("spread vector must have at least one weight"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(domain("spread weights must be finite and non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(domain(format!("spread weights sum to {sum}, not 1")));
        }
        Ok(SpreadVector { weights })
    }

    /// Equal split `1/D` in every slot.
    pub fn uniform(deadline: u32) -> Self {
        assert!(deadline >= 1, "deadline must be at least one slot");
        let d = deadline as usize;
        SpreadVector {
            weights: vec![1.0 / d as f64; d],
        }
    }

    /// All symbols in the first slot.
    pub fn conventional(deadline: u32) -> Self {
        assert!(deadline >= 1, "deadline must be at least one slot");
        let mut weights = vec![0.0; deadline as usize];
        weights[0] = 1.0;
        SpreadVector { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        let first = self.weights[0];
        self.weights.iter().all(|w| *w == first)
    }
}

/// Operating point of one flow: coding rate, end-to-end erasure, deadline and
/// optionally the Chernoff parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPoint {
    pub rate: f64,
    pub erasure: f64,
    pub deadline: u32,
    pub theta: Option<f64>,
}

impl ChannelPoint {
    pub fn new(rate: f64, erasure: f64, deadline: u32) -> Result<Self> {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(domain(format!("rate {rate} outside (0, 1)")));
        }
        if !(erasure > 0.0 && erasure < 1.0) {
            return Err(domain(format!("erasure {erasure} outside (0, 1)")));
        }
        if deadline == 0 {
            return Err(domain("deadline must be at least one slot"));
        }
        Ok(ChannelPoint {
            rate,
            erasure,
            deadline,
            theta: None,
        })
    }

    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        if theta.is_nan() || theta <= 0.0 {
            return Err(domain(format!("theta {theta} must be positive")));
        }
        self.theta = Some(theta);
        Ok(self)
    }

    fn in_recovery_region(&self) -> bool {
        self.rate < 1.0 - self.erasure
    }
}

/// `ln(1 - beta + beta e^x)` for `x >= 0`, without overflow for large `x`.
pub(crate) fn log_mix(beta: f64, x: f64) -> f64 {
    if beta <= 0.0 {
        return 0.0;
    }
    if x < 30.0 {
        (beta * x.exp_m1()).ln_1p()
    } else {
        // x + ln(beta + (1 - beta) e^{-x})
        x + beta.ln() + ((1.0 - beta) / beta * (-x).exp()).ln_1p()
    }
}

/// Chernoff upper bound on the decoding failure probability.
///
/// Not clamped to 1: away from the optimum the bound can exceed one.
pub fn chernoff_bound(phi: &SpreadVector, pt: &ChannelPoint) -> Result<f64> {
    Ok((-chernoff_exponent(phi, pt)?).exp())
}

/// The bracketed exponent `theta(1-r) - sum ln(...)`; the bound is `exp(-exponent)`.
pub fn chernoff_exponent(phi: &SpreadVector, pt: &ChannelPoint) -> Result<f64> {
    let theta = pt.theta.ok_or(Error::MissingTheta)?;
    if phi.len() != pt.deadline as usize {
        return Err(Error::DimensionMismatch {
            expected: pt.deadline as usize,
            got: phi.len(),
        });
    }
    let mix: f64 = phi
        .weights
        .iter()
        .map(|w| log_mix(pt.erasure, theta * w))
        .sum();
    Ok(theta * (1.0 - pt.rate) - mix)
}

pub fn optimal_phi(deadline: u32) -> SpreadVector {
    SpreadVector::uniform(deadline)
}

/// `ln((1 - r)(1 - beta) / (r beta))`, accurate when `r` is close to `1 - beta`.
fn log_odds_gap(rate: f64, erasure: f64) -> f64 {
    let gap = (1.0 - rate) - erasure;
    (gap / erasure).ln_1p() - (-gap / (1.0 - erasure)).ln_1p()
}

/// Closed-form optimal Chernoff parameter for the equal split:
/// `D [ln((1 - r)/beta) - ln(r/(1 - beta))]`.
pub fn optimal_theta(pt: &ChannelPoint) -> Result<f64> {
    if !pt.in_recovery_region() {
        return Err(domain(format!(
            "rate {} not below 1 - beta = {}: optimal theta degenerates to 0",
            pt.rate,
            1.0 - pt.erasure
        )));
    }
    Ok(f64::from(pt.deadline) * log_odds_gap(pt.rate, pt.erasure))
}

/// Bernoulli KL divergence `KL(Bern(a) || Bern(b))` with `0 ln 0 = 0`.
pub fn kl_bernoulli(a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(domain(format!("kl_bernoulli: a = {a} outside [0, 1]")));
    }
    if !(b > 0.0 && b < 1.0) {
        return Err(domain(format!("kl_bernoulli: b = {b} outside (0, 1)")));
    }
    // a ln(a/b) = a ln1p((a-b)/b), likewise for the complement; keeps
    // precision when a is near b.
    let head = if a == 0.0 { 0.0 } else { a * ((a - b) / b).ln_1p() };
    let tail = if a == 1.0 {
        0.0
    } else {
        (1.0 - a) * ((b - a) / (1.0 - b)).ln_1p()
    };
    Ok((head + tail).max(0.0))
}

/// `D * KL(Bern(1 - r) || Bern(beta))`, the error exponent at the closed-form optimum.
pub fn error_exponent(pt: &ChannelPoint) -> f64 {
    f64::from(pt.deadline) * kl_bernoulli(1.0 - pt.rate, pt.erasure).unwrap_or(f64::NAN)
}

/// Decoding error bound at the equal split and optimal theta:
/// `exp(-D KL(Bern(1 - r) || Bern(beta)))`.
pub fn error_at_optimum(pt: &ChannelPoint) -> f64 {
    (-error_exponent(pt)).exp()
}

/// `(de/dr, d2e/dr2)` of [`error_at_optimum`].
pub fn error_derivatives(pt: &ChannelPoint) -> Result<(f64, f64)> {
    let theta = optimal_theta(pt)?;
    let e = error_at_optimum(pt);
    let r = pt.rate;
    let curvature = f64::from(pt.deadline) / (r * (1.0 - r));
    Ok((e * theta, e * (theta * theta - curvature)))
}

/// Signed margin of the sufficient condition for convexity of `e` in the rate;
/// the condition holds when the margin is `<= 0`.
pub fn convexity_margin(rate: f64, rate_max: f64, erasure: f64, deadline: u32) -> Result<f64> {
    if !(rate > 0.0 && rate < 1.0) || !(rate_max > 0.0 && rate_max < 1.0) {
        return Err(domain("convexity_margin: rates must lie in (0, 1)"));
    }
    if !(erasure > 0.0 && erasure < 1.0) {
        return Err(domain("convexity_margin: erasure must lie in (0, 1)"));
    }
    let lhs = f64::from(deadline).sqrt() / (rate * (1.0 - rate)).sqrt();
    let odds = ((1.0 - rate_max) / rate_max) * ((1.0 - erasure) / erasure);
    Ok(lhs - odds.ln())
}
