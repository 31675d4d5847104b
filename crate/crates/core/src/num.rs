//! Network utility maximization over coding rates.
//!
//! Airtime limits are dualized with one price per cell; for fixed prices the
//! problem splits into independent per-flow solves, and prices follow a
//! projected subgradient iteration `p <- [p - step * slack]^+`.

use indexmap::IndexMap;

use crate::error::{domain, Error, Result};
use crate::flow_solver::{
    marginal_price, rate_sensitivity, solve_flow_rate_with, Boundary, FlowProblem, FlowSolution, RootMethod,
    DEFAULT_RATE_TOL,
};
use crate::kernel::{error_at_optimum, ChannelPoint};
use crate::model::{FlowSpec, NetworkSpec};
use crate::oracle::{grid_search_joint, JointGrid};

/// Nonnegative price per cell, in network order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriceVector {
    prices: IndexMap<String, f64>,
}

impl PriceVector {
    pub fn zeros(net: &NetworkSpec) -> Self {
        Self::uniform(net, 0.0)
    }

    pub fn uniform(net: &NetworkSpec, value: f64) -> Self {
        PriceVector {
            prices: net.cells.iter().map(|c| (c.id.clone(), value.max(0.0))).collect(),
        }
    }

    /// # Panics
    /// If a price is negative or not finite.
    pub fn from_pairs<K: Into<String>>(pairs: impl IntoIterator<Item = (K, f64)>) -> Self {
        let prices = pairs
            .into_iter()
            .map(|(k, v)| {
                assert!(v >= 0.0 && v.is_finite(), "price must be finite and >= 0, got {v}");
                (k.into(), v)
            })
            .collect();
        PriceVector { prices }
    }

    pub fn get(&self, cell: &str) -> Option<f64> {
        self.prices.get(cell).copied()
    }

    pub fn set(&mut self, cell: &str, value: f64) -> Result<()> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(domain(format!("price {value} for cell {cell} must be finite and >= 0")));
        }
        self.prices.insert(cell.to_string(), value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.prices.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.prices.values().fold(0.0, |a, &b| a.max(b))
    }
}

/// Price step schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `p - gamma * slack`.
    Constant(f64),
    /// `p - gamma / sqrt(i) * slack`.
    Diminishing(f64),
    /// Per-cell step `eta / R_c`, where `R_c` is the row sum of the local
    /// slack Jacobian. Cells whose flows all sit on a rate bound jump to the
    /// nearest price where one of them leaves it.
    Scaled(f64),
}

impl StepRule {
    fn gamma(self) -> f64 {
        match self {
            StepRule::Constant(g) | StepRule::Diminishing(g) | StepRule::Scaled(g) => g,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub step: StepRule,
    pub max_iters: usize,
    /// Largest tolerated airtime overrun per cell.
    pub feas_tol: f64,
    /// Stop once `max |dp| <= price_tol * max p`.
    pub price_tol: f64,
    /// Defaults to all zeros.
    pub initial_prices: Option<PriceVector>,
    pub rate_tol: f64,
    pub root_method: RootMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step: StepRule::Scaled(1.0),
            max_iters: 5000,
            feas_tol: 1e-9,
            price_tol: 1e-9,
            initial_prices: None,
            rate_tol: DEFAULT_RATE_TOL,
            root_method: RootMethod::default(),
        }
    }
}

impl SolverConfig {
    fn check(&self) -> Result<()> {
        let g = self.step.gamma();
        if !(g > 0.0 && g.is_finite()) {
            return Err(domain(format!("step size must be positive, got {g}")));
        }
        if self.max_iters == 0 {
            return Err(domain("max_iters must be positive"));
        }
        if !(self.feas_tol > 0.0 && self.price_tol > 0.0 && self.rate_tol > 0.0) {
            return Err(domain("tolerances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub utility: f64,
    pub dual: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub allocation: IndexMap<String, FlowSolution>,
    /// Aggregated route price per flow.
    pub lambdas: IndexMap<String, f64>,
    pub prices: PriceVector,
    /// `sum ln(1 - e_f)`.
    pub utility: f64,
    /// `sum ln k_f + utility`.
    pub total_utility: f64,
    pub throughputs: IndexMap<String, f64>,
    pub slacks: IndexMap<String, f64>,
    pub dual_value: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    pub status: Status,
    /// Reported rates scaled up just enough to satisfy every airtime limit.
    pub feasible_rates: IndexMap<String, f64>,
    pub feasible_utility: f64,
    pub diagnostics: Vec<String>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }

    pub fn max_violation(&self) -> f64 {
        self.slacks.values().fold(0.0, |a, &s| a.max(-s))
    }

    pub fn duality_gap(&self) -> f64 {
        self.dual_value - self.utility
    }
}

/// `sum ln(1 - e)`; fails if any `e >= 1`.
pub fn utility_of(errors: impl IntoIterator<Item = f64>) -> Result<f64> {
    errors.into_iter().try_fold(0.0, |acc, e| {
        if !(0.0..1.0).contains(&e) {
            return Err(domain(format!("error probability {e} outside [0, 1)")));
        }
        Ok(acc + (-e).ln_1p())
    })
}

/// `k (1 - e)` symbols per slot.
pub fn throughput_of(flow: &FlowSpec, error: f64) -> f64 {
    f64::from(flow.packet_symbols) * (1.0 - error)
}

struct CFlow {
    id: String,
    k: f64,
    problem: FlowProblem,
    hops: Vec<(usize, f64)>,
}

struct Compiled {
    cells: Vec<String>,
    periods: Vec<f64>,
    flows: Vec<CFlow>,
}

fn compile(net: &NetworkSpec) -> Result<Compiled> {
    let diags = net.validate();
    if !diags.is_empty() {
        let msg = diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return Err(Error::Infeasible(msg));
    }
    let flows = net
        .flows
        .iter()
        .map(|f| {
            let hops = f
                .route
                .iter()
                .map(|h| {
                    net.cell_index(&h.cell)
                        .map(|i| (i, h.phy_rate))
                        .ok_or_else(|| Error::UnknownCell(h.cell.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CFlow {
                id: f.id.clone(),
                k: f64::from(f.packet_symbols),
                problem: FlowProblem::from_flow(f, 0.0),
                hops,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Compiled {
        cells: net.cells.iter().map(|c| c.id.clone()).collect(),
        periods: net.cells.iter().map(|c| c.period).collect(),
        flows,
    })
}

impl Compiled {
    fn prices_from(&self, pv: &PriceVector) -> Result<Vec<f64>> {
        self.cells
            .iter()
            .map(|c| pv.get(c).ok_or_else(|| Error::MissingPrice(c.clone())))
            .collect()
    }

    fn to_vector(&self, p: &[f64]) -> PriceVector {
        PriceVector {
            prices: self.cells.iter().cloned().zip(p.iter().copied()).collect(),
        }
    }

    fn slacks(&self, rates: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut slack = self.periods.clone();
        for (i, f) in self.flows.iter().enumerate() {
            let r = rates(i);
            for &(c, w) in &f.hops {
                slack[c] -= f.k / (r * w);
            }
        }
        slack
    }
}

struct Eval {
    problems: Vec<FlowProblem>,
    sols: Vec<FlowSolution>,
    slacks: Vec<f64>,
    utility: f64,
    dual: f64,
    max_violation: f64,
}

fn evaluate(c: &Compiled, p: &[f64], cfg: &SolverConfig) -> Result<Eval> {
    let mut problems = Vec::with_capacity(c.flows.len());
    let mut sols = Vec::with_capacity(c.flows.len());
    for f in &c.flows {
        let lambda: f64 = f.hops.iter().map(|&(cell, w)| p[cell] / w).sum();
        let prob = FlowProblem {
            price: lambda,
            ..f.problem
        };
        let sol = solve_flow_rate_with(&prob, cfg.rate_tol, cfg.root_method).map_err(|e| match e {
            Error::NoRecoveryRegion { rate_min, limit, .. } => Error::NoRecoveryRegion {
                flow: f.id.clone(),
                rate_min,
                limit,
            },
            e => e,
        })?;
        problems.push(prob);
        sols.push(sol);
    }
    let slacks = c.slacks(|i| sols[i].rate);
    let utility = utility_of(sols.iter().map(|s| s.error))?;
    let dual = utility + p.iter().zip(&slacks).map(|(p, s)| p * s).sum::<f64>();
    let max_violation = slacks.iter().fold(0.0f64, |a, &s| a.max(-s));
    Ok(Eval {
        problems,
        sols,
        slacks,
        utility,
        dual,
        max_violation,
    })
}

const BREAKPOINT_NUDGE: f64 = 1e-6;

fn update(c: &Compiled, p: &[f64], ev: &Eval, rule: StepRule, iter: usize) -> Vec<f64> {
    match rule {
        StepRule::Constant(g) => p.iter().zip(&ev.slacks).map(|(p, s)| (p - g * s).max(0.0)).collect(),
        StepRule::Diminishing(g) => {
            let g = g / (iter as f64).sqrt();
            p.iter().zip(&ev.slacks).map(|(p, s)| (p - g * s).max(0.0)).collect()
        }
        StepRule::Scaled(eta) => scaled_update(c, p, ev, eta),
    }
}

fn scaled_update(c: &Compiled, p: &[f64], ev: &Eval, eta: f64) -> Vec<f64> {
    let mut row = vec![0.0; p.len()];
    for (i, f) in c.flows.iter().enumerate() {
        let sol = &ev.sols[i];
        let s = rate_sensitivity(&ev.problems[i], sol);
        if s == 0.0 {
            continue;
        }
        let inv_w: f64 = f.hops.iter().map(|&(_, w)| 1.0 / w).sum();
        let a = f.k / (sol.rate * sol.rate) * s * inv_w;
        for &(cell, w) in &f.hops {
            row[cell] += a / w;
        }
    }

    (0..p.len())
        .map(|cell| {
            let slack = ev.slacks[cell];
            if row[cell] > 0.0 && row[cell].is_finite() {
                return (p[cell] - eta * slack / row[cell]).max(0.0);
            }
            if slack < 0.0 {
                raise_to_breakpoint(c, p, ev, cell)
            } else if slack > 0.0 && p[cell] > 0.0 {
                lower_to_breakpoint(c, p, ev, cell)
            } else {
                p[cell]
            }
        })
        .collect()
}

/// Smallest price at which some flow of `cell` leaves its minimum rate.
fn raise_to_breakpoint(c: &Compiled, p: &[f64], ev: &Eval, cell: usize) -> f64 {
    let mut best = f64::INFINITY;
    for (i, f) in c.flows.iter().enumerate() {
        let Some(&(_, w)) = f.hops.iter().find(|h| h.0 == cell) else {
            continue;
        };
        if ev.sols[i].boundary != Boundary::AtMin {
            continue;
        }
        let prob = &ev.problems[i];
        let release = marginal_price(prob, prob.rate_min);
        let others = prob.price - p[cell] / w;
        best = best.min((release - others) * w);
    }
    if best.is_finite() && best > p[cell] {
        best * (1.0 + BREAKPOINT_NUDGE)
    } else if p[cell] > 0.0 {
        p[cell] * 2.0
    } else {
        f64::MIN_POSITIVE.sqrt()
    }
}

/// Largest price at which some flow of `cell` leaves its maximum rate.
fn lower_to_breakpoint(c: &Compiled, p: &[f64], ev: &Eval, cell: usize) -> f64 {
    let mut best = 0.0f64;
    for (i, f) in c.flows.iter().enumerate() {
        let Some(&(_, w)) = f.hops.iter().find(|h| h.0 == cell) else {
            continue;
        };
        if ev.sols[i].boundary != Boundary::AtMax {
            continue;
        }
        let prob = &ev.problems[i];
        let release = marginal_price(prob, prob.rate_max);
        let others = prob.price - p[cell] / w;
        best = best.max((release - others) * w);
    }
    if best < p[cell] {
        (best * (1.0 - BREAKPOINT_NUDGE)).max(0.0)
    } else {
        0.5 * p[cell]
    }
}

fn relative_movement(old: &[f64], new: &[f64]) -> f64 {
    let scale = old.iter().chain(new).fold(0.0f64, |a, &b| a.max(b));
    if scale == 0.0 {
        return 0.0;
    }
    old.iter().zip(new).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Shrinks the step from `p` towards `proposal` until the dual decreases
/// sufficiently. The dual is convex with gradient equal to the slack vector.
fn backtrack(c: &Compiled, p: &[f64], ev: &Eval, proposal: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, Eval)> {
    let mut t = 1.0;
    let mut last = None;
    for _ in 0..MAX_BACKTRACKS {
        let trial: Vec<f64> = p
            .iter()
            .zip(proposal)
            .map(|(a, b)| (a + t * (b - a)).max(0.0))
            .collect();
        let slope: f64 = ev.slacks.iter().zip(&trial).zip(p).map(|((s, q), a)| s * (q - a)).sum();
        let trial_ev = evaluate(c, &trial, cfg)?;
        let noise = 16.0 * f64::EPSILON * ev.dual.abs().max(trial_ev.dual.abs());
        if trial_ev.dual <= ev.dual + ARMIJO * slope || slope.abs() <= noise {
            return Ok((trial, trial_ev));
        }
        last = Some((trial, trial_ev));
        t *= 0.5;
    }
    Ok(last.expect("at least one trial"))
}

/// One price update at iteration 1 of the configured schedule.
/// Returns the new prices and the flow solutions at the old prices.
pub fn subgradient_step(
    net: &NetworkSpec,
    prices: &PriceVector,
    config: &SolverConfig,
) -> Result<(PriceVector, IndexMap<String, FlowSolution>)> {
    config.check()?;
    let c = compile(net)?;
    let p = c.prices_from(prices)?;
    let ev = evaluate(&c, &p, config)?;
    let next = update(&c, &p, &ev, config.step, 1);
    let rates = c.flows.iter().map(|f| f.id.clone()).zip(ev.sols).collect();
    Ok((c.to_vector(&next), rates))
}

/// Dual function with the box-constrained inner maximization.
pub fn dual_value(net: &NetworkSpec, prices: &PriceVector) -> Result<f64> {
    let c = compile(net)?;
    let p = c.prices_from(prices)?;
    Ok(evaluate(&c, &p, &SolverConfig::default())?.dual)
}

pub fn solve(net: &NetworkSpec, config: &SolverConfig) -> Result<SolveReport> {
    config.check()?;
    let c = compile(net)?;
    let mut p = match &config.initial_prices {
        Some(pv) => c.prices_from(pv)?,
        None => vec![0.0; c.cells.len()],
    };
    if p.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(domain("initial prices must be finite and >= 0"));
    }

    let mut trace = Vec::new();
    let mut status = Status::MaxIterations;
    let mut ev = evaluate(&c, &p, config)?;
    let mut iterations = 0;
    for iter in 1..=config.max_iters {
        iterations = iter;
        trace.push(TraceRow {
            iter,
            utility: ev.utility,
            dual: ev.dual,
            max_violation: ev.max_violation,
        });
        let proposal = update(&c, &p, &ev, config.step, iter);
        if ev.max_violation <= config.feas_tol && relative_movement(&p, &proposal) <= config.price_tol {
            status = Status::Converged;
            break;
        }
        if iter == config.max_iters {
            break;
        }
        let (next, next_ev) = match config.step {
            StepRule::Scaled(_) => backtrack(&c, &p, &ev, &proposal, config)?,
            _ => {
                let e = evaluate(&c, &proposal, config)?;
                (proposal, e)
            }
        };
        p = next;
        ev = next_ev;
    }

    Ok(build_report(net, &c, p, ev, iterations, trace, status))
}

fn build_report(
    net: &NetworkSpec,
    c: &Compiled,
    p: Vec<f64>,
    ev: Eval,
    iterations: usize,
    trace: Vec<TraceRow>,
    status: Status,
) -> SolveReport {
    let mut diagnostics = Vec::new();
    if status == Status::MaxIterations {
        diagnostics.push(format!(
            "no convergence after {iterations} iterations (max violation {:e})",
            ev.max_violation
        ));
    }

    // scale rates up by the worst overrun on each route
    let ratio: Vec<f64> = c
        .periods
        .iter()
        .zip(&ev.slacks)
        .map(|(t, s)| (t - s) / t)
        .collect();
    let mut feasible_rates = IndexMap::new();
    let mut feasible_errors = Vec::new();
    for (i, f) in c.flows.iter().enumerate() {
        let prob = &ev.problems[i];
        let scale = f.hops.iter().map(|&(cell, _)| ratio[cell]).fold(1.0, f64::max);
        let cap = prob.rate_max.min(prob.rate_limit());
        let r = (ev.sols[i].rate * scale).min(cap.max(ev.sols[i].rate));
        feasible_rates.insert(f.id.clone(), r);
        feasible_errors.push(flow_error(prob, r));
        if prob.erasure > 0.0 && ev.sols[i].rate >= prob.rate_limit() - 1e-6 {
            diagnostics.push(format!("flow {} rate is within 1e-6 of its recovery limit", f.id));
        }
    }
    let feasible_utility = utility_of(feasible_errors).unwrap_or(f64::NEG_INFINITY);

    let total_utility = ev.utility + c.flows.iter().map(|f| f.k.ln()).sum::<f64>();
    let throughputs = net
        .flows
        .iter()
        .zip(&ev.sols)
        .map(|(f, s)| (f.id.clone(), throughput_of(f, s.error)))
        .collect();

    SolveReport {
        lambdas: c.flows.iter().zip(&ev.problems).map(|(f, pr)| (f.id.clone(), pr.price)).collect(),
        allocation: c.flows.iter().map(|f| f.id.clone()).zip(ev.sols.iter().copied()).collect(),
        prices: c.to_vector(&p),
        utility: ev.utility,
        total_utility,
        throughputs,
        slacks: c.cells.iter().cloned().zip(ev.slacks.iter().copied()).collect(),
        dual_value: ev.dual,
        iterations,
        trace,
        status,
        feasible_rates,
        feasible_utility,
        diagnostics,
    }
}

fn flow_error(prob: &FlowProblem, rate: f64) -> f64 {
    if prob.erasure == 0.0 {
        return 0.0;
    }
    error_at_optimum(&ChannelPoint {
        rate,
        erasure: prob.erasure,
        deadline: prob.deadline,
        theta: None,
    })
}

/// Outcome of comparing a solver report against the exhaustive grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCheck {
    pub solver_utility: f64,
    pub grid_utility: f64,
    pub grid_rates: Vec<f64>,
    /// `grid_utility - solver_utility`; positive means the grid found better.
    pub excess: f64,
    pub passed: bool,
}

/// Exhaustive check that no feasible grid point beats the solver by more than `tol`.
pub fn verify_joint_optimality(
    net: &NetworkSpec,
    report: &SolveReport,
    grid: &JointGrid,
    tol: f64,
) -> Result<JointCheck> {
    let best = grid_search_joint(net, grid)?;
    let solver_utility = report.feasible_utility;
    let excess = best.utility - solver_utility;
    Ok(JointCheck {
        solver_utility,
        grid_utility: best.utility,
        grid_rates: best.rates,
        excess,
        passed: excess <= tol,
    })
}
