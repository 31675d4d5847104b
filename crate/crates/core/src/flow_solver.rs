//! Optimal coding rate of a single flow for a given aggregated airtime price.
//!
//! With the spread and Chernoff parameter at their closed-form optima the
//! per-flow Lagrangian is `ln(1 - e(r)) - lambda k / r`. Its stationarity
//! condition `e/(1-e) * theta*(r) = lambda k / r^2` is solved here in log form,
//!
//! ```text
//! q(r) = ln(e theta* r^2 / (k (1 - e))) - ln(lambda) = 0,
//! ```
//!
//! which is strictly increasing on `(0, 1 - beta)`; the root is then projected
//! onto `[rate_min, rate_max]`.

use crate::error::{domain, Error, Result};
use crate::kernel::{error_at_optimum, error_exponent, optimal_theta, ChannelPoint, ENDPOINT_EPS};
use crate::model::FlowSpec;
use crate::num::PriceVector;

pub const DEFAULT_RATE_TOL: f64 = 1e-10;

const MAX_EXPANSIONS: usize = 8;
const MAX_ROOT_ITERS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowProblem {
    pub packet_symbols: u32,
    pub deadline: u32,
    pub erasure: f64,
    pub rate_min: f64,
    pub rate_max: f64,
    /// Aggregated route price `lambda_f`.
    pub price: f64,
}

impl FlowProblem {
    pub fn from_flow(flow: &FlowSpec, price: f64) -> Self {
        FlowProblem {
            packet_symbols: flow.packet_symbols,
            deadline: flow.deadline_slots,
            erasure: flow.end_to_end_erasure(),
            rate_min: flow.rate_min,
            rate_max: flow.rate_max,
            price,
        }
    }

    fn k(&self) -> f64 {
        f64::from(self.packet_symbols)
    }

    /// Largest rate usable numerically: `1 - beta - eps`.
    pub fn rate_limit(&self) -> f64 {
        1.0 - self.erasure - ENDPOINT_EPS
    }

    fn point(&self, rate: f64) -> ChannelPoint {
        ChannelPoint {
            rate,
            erasure: self.erasure,
            deadline: self.deadline,
            theta: None,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.rate_min > 0.0 && self.rate_min <= self.rate_max && self.rate_max <= 1.0) {
            return Err(domain(format!(
                "rate bounds must satisfy 0 < rmin <= rmax <= 1, got [{}, {}]",
                self.rate_min, self.rate_max
            )));
        }
        if !(0.0..1.0).contains(&self.erasure) {
            return Err(domain(format!("erasure {} outside [0, 1)", self.erasure)));
        }
        if !(self.price >= 0.0 && self.price.is_finite()) {
            return Err(domain(format!("price {} must be finite and >= 0", self.price)));
        }
        if self.deadline == 0 || self.packet_symbols == 0 {
            return Err(domain("deadline and packet size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Interior,
    AtMin,
    AtMax,
}

impl Boundary {
    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::Interior => "interior",
            Boundary::AtMin => "at_min",
            Boundary::AtMax => "at_max",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSolution {
    pub rate: f64,
    pub theta: f64,
    pub error: f64,
    pub boundary: Boundary,
    /// `|e/(1-e) theta* - lambda k / r^2|` for interior solutions, 0 on a bound.
    pub kkt_residual: f64,
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RootMethod {
    Bisection,
    #[default]
    SafeguardedNewton,
}

/// `ln(1 - e)` at the closed-form optimum, from the exponent `x = D KL`.
fn ln_survival(exponent: f64) -> f64 {
    (-(-exponent).exp_m1()).ln()
}

/// Log of the price at which `rate` is stationary:
/// `ln(e theta* r^2 / (k (1 - e)))`. Increasing in `rate`.
pub fn log_marginal_price(prob: &FlowProblem, rate: f64) -> f64 {
    let pt = prob.point(rate);
    let x = error_exponent(&pt);
    let theta = optimal_theta(&pt).unwrap_or(0.0);
    -x + theta.ln() + 2.0 * rate.ln() - prob.k().ln() - ln_survival(x)
}

/// Price `lambda` for which `rate` solves the interior stationarity equation.
pub fn marginal_price(prob: &FlowProblem, rate: f64) -> f64 {
    log_marginal_price(prob, rate).exp()
}

/// `d/dr` of [`log_marginal_price`].
pub fn log_marginal_price_slope(prob: &FlowProblem, rate: f64) -> f64 {
    let pt = prob.point(rate);
    let theta = optimal_theta(&pt).unwrap_or(0.0);
    let survival = -(-error_exponent(&pt)).exp_m1();
    let d = f64::from(prob.deadline);
    theta / survival + 2.0 / rate - d / (rate * (1.0 - rate) * theta)
}

/// `dr*/dlambda` at an interior solution.
pub fn rate_sensitivity(prob: &FlowProblem, sol: &FlowSolution) -> f64 {
    if sol.boundary != Boundary::Interior || prob.price <= 0.0 {
        return 0.0;
    }
    let slope = log_marginal_price_slope(prob, sol.rate);
    if slope > 0.0 && slope.is_finite() {
        1.0 / (prob.price * slope)
    } else {
        0.0
    }
}

fn finish(prob: &FlowProblem, rate: f64, boundary: Boundary) -> FlowSolution {
    if prob.erasure == 0.0 {
        return FlowSolution {
            rate,
            theta: f64::INFINITY,
            error: 0.0,
            boundary,
            kkt_residual: 0.0,
            price: prob.price,
        };
    }
    let pt = prob.point(rate);
    let theta = optimal_theta(&pt).unwrap_or(0.0);
    let error = error_at_optimum(&pt);
    let kkt_residual = match boundary {
        Boundary::Interior => {
            let odds = error / -(-error_exponent(&pt)).exp_m1();
            (odds * theta - prob.price * prob.k() / (rate * rate)).abs()
        }
        _ => 0.0,
    };
    FlowSolution {
        rate,
        theta,
        error,
        boundary,
        kkt_residual,
        price: prob.price,
    }
}

/// Optimal coding rate using safeguarded Newton.
pub fn solve_flow_rate(prob: &FlowProblem, tol: f64) -> Result<FlowSolution> {
    solve_flow_rate_with(prob, tol, RootMethod::default())
}

pub fn solve_flow_rate_with(prob: &FlowProblem, tol: f64, method: RootMethod) -> Result<FlowSolution> {
    prob.check()?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(domain("tolerance must be positive"));
    }

    if prob.erasure == 0.0 {
        // error-free channel: only the airtime cost matters
        return Ok(if prob.price > 0.0 {
            finish(prob, prob.rate_max, Boundary::AtMax)
        } else {
            finish(prob, prob.rate_min, Boundary::AtMin)
        });
    }

    let limit = prob.rate_limit();
    if prob.rate_min >= limit {
        return Err(Error::NoRecoveryRegion {
            flow: String::new(),
            rate_min: prob.rate_min,
            limit: 1.0 - prob.erasure,
        });
    }
    if prob.price == 0.0 {
        return Ok(finish(prob, prob.rate_min, Boundary::AtMin));
    }

    let ln_price = prob.price.ln();
    let balance = |r: f64| log_marginal_price(prob, r) - ln_price;

    let lo = prob.rate_min;
    if balance(lo) >= 0.0 {
        return Ok(finish(prob, lo, Boundary::AtMin));
    }

    let mut hi = prob.rate_max.min(limit);
    let capped = prob.rate_max <= limit;
    let top = balance(hi);
    if top.is_nan() || top <= 0.0 {
        if capped {
            return Ok(finish(prob, hi, Boundary::AtMax));
        }
        // q -> +inf at 1 - beta; step back from the endpoint until the sign shows.
        let mut found = false;
        for j in 1..=MAX_EXPANSIONS {
            let cand = 1.0 - prob.erasure - ENDPOINT_EPS * 10f64.powi(j as i32);
            if cand <= lo {
                break;
            }
            hi = cand;
            if balance(hi) > 0.0 {
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Bracketing {
                expansions: MAX_EXPANSIONS,
            });
        }
    }

    let root = match method {
        RootMethod::Bisection => bisect(balance, lo, hi, tol),
        RootMethod::SafeguardedNewton => newton(prob, ln_price, lo, hi, tol),
    };
    Ok(finish(prob, root, Boundary::Interior))
}

/// Bisection for an increasing `f` with `f(lo) < 0 < f(hi)`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    for _ in 0..MAX_ROOT_ITERS {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v == 0.0 {
            return mid;
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn newton(prob: &FlowProblem, ln_price: f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut x = 0.5 * (lo + hi);
    let mut last_step = hi - lo;
    for _ in 0..MAX_ROOT_ITERS {
        let v = log_marginal_price(prob, x) - ln_price;
        if v == 0.0 {
            return x;
        }
        if v < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= tol {
            return 0.5 * (lo + hi);
        }
        let slope = log_marginal_price_slope(prob, x);
        let candidate = x - v / slope;
        let inside = slope > 0.0 && candidate > lo && candidate < hi;
        let step = (candidate - x).abs();
        if inside && step <= 0.5 * last_step {
            last_step = step;
            x = candidate;
            if step <= 0.25 * tol {
                return x;
            }
        } else {
            last_step = hi - lo;
            x = 0.5 * (lo + hi);
        }
    }
    x
}

/// `lambda_f = sum over route cells of p_c / w_{f,c}`.
pub fn price_weighted_cost(prices: &PriceVector, flow: &FlowSpec) -> Result<f64> {
    flow.route.iter().try_fold(0.0, |acc, hop| {
        let p = prices
            .get(&hop.cell)
            .ok_or_else(|| Error::MissingPrice(hop.cell.clone()))?;
        Ok(acc + p / hop.phy_rate)
    })
}
