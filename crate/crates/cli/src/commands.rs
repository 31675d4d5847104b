use std::fs;
use std::path::Path;

use erasurenum::flow_solver::{solve_flow_rate, FlowProblem, DEFAULT_RATE_TOL};
use erasurenum::kernel::{error_at_optimum, ChannelPoint, SpreadVector};
use erasurenum::num::{self, SolveReport, SolverConfig, StepRule};
use erasurenum::oracle::{exact_error_probability, MAX_ENUM_DEADLINE};
use erasurenum::sim::{simulate_flow, simulate_flow_summary, simulate_hop_level};
use erasurenum::{parse_network, Error, NetworkSpec};

use crate::args::{Axis, SimulateArgs, SolveArgs, SolverOpts, SweepArgs, ValidateArgs};
use crate::output::{csv_writer, num, prepare_dir, Manifest};
use crate::{Failure, EXIT_NO_CONVERGENCE, EXIT_PARSE, EXIT_VALIDATION};

pub fn load(path: &Path) -> Result<NetworkSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    parse_network(&text).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))
}

pub fn require_valid(net: &NetworkSpec) -> Result<(), Failure> {
    let diags = net.validate();
    if diags.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = diags.iter().map(|d| format!("  {d}")).collect();
    Err(Failure::new(
        EXIT_VALIDATION,
        format!("{} problem(s):\n{}", diags.len(), lines.join("\n")),
    ))
}

pub fn solver_config(opts: &SolverOpts) -> SolverConfig {
    let step = match (opts.step, opts.diminishing) {
        (None, _) => StepRule::Scaled(1.0),
        (Some(g), false) => StepRule::Constant(g),
        (Some(g), true) => StepRule::Diminishing(g),
    };
    SolverConfig {
        step,
        max_iters: opts.iters,
        feas_tol: opts.feas_tol,
        price_tol: opts.price_tol,
        ..SolverConfig::default()
    }
}

pub fn solver_failure(e: Error) -> Failure {
    match e {
        Error::Infeasible(_) | Error::NoRecoveryRegion { .. } | Error::UnknownCell(_) | Error::UnknownFlow(_) => {
            Failure::new(EXIT_VALIDATION, e.to_string())
        }
        Error::Domain(_) => Failure::new(EXIT_PARSE, e.to_string()),
        _ => Failure::new(EXIT_NO_CONVERGENCE, e.to_string()),
    }
}

pub fn validate(args: &ValidateArgs) -> Result<(), Failure> {
    let net = load(&args.input)?;
    require_valid(&net)?;
    println!("ok: {} cells, {} flows", net.cells.len(), net.flows.len());
    Ok(())
}

fn write_solution(out: &Path, net: &NetworkSpec, rep: &SolveReport) -> Result<(), Failure> {
    let mut w = csv_writer(out, "solution.csv")?;
    w.write_record(["flow", "rate", "theta", "error", "throughput", "boundary", "lambda", "integer_codeword"])?;
    for f in &net.flows {
        let s = &rep.allocation[&f.id];
        let codeword = (f64::from(f.packet_symbols) / s.rate).ceil();
        w.write_record([
            f.id.clone(),
            num(s.rate),
            num(s.theta),
            num(s.error),
            num(rep.throughputs[&f.id]),
            s.boundary.as_str().to_string(),
            num(rep.lambdas[&f.id]),
            format!("{codeword}"),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(out, "cells.csv")?;
    w.write_record(["cell", "price", "slack"])?;
    for (cell, p) in rep.prices.iter() {
        w.write_record([cell.to_string(), num(p), num(rep.slacks[cell])])?;
    }
    w.flush()?;

    let mut w = csv_writer(out, "trace.csv")?;
    w.write_record(["iter", "utility", "dual", "max_violation"])?;
    for row in &rep.trace {
        w.write_record([row.iter.to_string(), num(row.utility), num(row.dual), num(row.max_violation)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn solve(args: &SolveArgs) -> Result<(), Failure> {
    let net = load(&args.input)?;
    require_valid(&net)?;
    prepare_dir(&args.out)?;
    let mut manifest = Manifest::new("solve");
    manifest.path("input", &args.input).path("out", &args.out).solver(&args.solver);
    manifest.write(&args.out)?;

    let rep = num::solve(&net, &solver_config(&args.solver)).map_err(solver_failure)?;
    write_solution(&args.out, &net, &rep)?;
    for d in &rep.diagnostics {
        eprintln!("note: {d}");
    }
    if !rep.converged() {
        return Err(Failure::new(
            EXIT_NO_CONVERGENCE,
            format!("no convergence after {} iterations; partial results written", rep.iterations),
        ));
    }
    println!(
        "converged in {} iterations: utility {}, total utility {}",
        rep.iterations, rep.utility, rep.total_utility
    );
    Ok(())
}

fn solved_or_fail(net: &NetworkSpec, opts: &SolverOpts) -> Result<SolveReport, Failure> {
    let rep = num::solve(net, &solver_config(opts)).map_err(solver_failure)?;
    if !rep.converged() {
        return Err(Failure::new(
            EXIT_NO_CONVERGENCE,
            format!("solver did not converge after {} iterations", rep.iterations),
        ));
    }
    Ok(rep)
}

fn bound_at(rate: f64, erasure: f64, deadline: u32) -> f64 {
    if erasure == 0.0 {
        return 0.0;
    }
    if rate >= 1.0 - erasure {
        return 1.0;
    }
    error_at_optimum(&ChannelPoint {
        rate,
        erasure,
        deadline,
        theta: None,
    })
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let net = load(&args.input)?;
    require_valid(&net)?;
    let given = args.rates.clone().unwrap_or_default().0;
    for (id, _) in &given {
        if net.flow(id).is_none() {
            return Err(Failure::new(EXIT_VALIDATION, format!("unknown flow {id} in --rates")));
        }
    }
    let rates: Vec<f64> = if net.flows.iter().all(|f| given.iter().any(|(id, _)| *id == f.id)) {
        net.flows
            .iter()
            .map(|f| given.iter().rev().find(|(id, _)| *id == f.id).map(|g| g.1).unwrap_or(f.rate_min))
            .collect()
    } else {
        let rep = solved_or_fail(&net, &args.solver)?;
        net.flows
            .iter()
            .map(|f| {
                given
                    .iter()
                    .rev()
                    .find(|(id, _)| *id == f.id)
                    .map(|g| g.1)
                    .unwrap_or(rep.allocation[&f.id].rate)
            })
            .collect()
    };

    prepare_dir(&args.out)?;
    let mut manifest = Manifest::new("simulate");
    manifest
        .path("input", &args.input)
        .path("out", &args.out)
        .set("slots", args.slots)
        .set("seed", args.seed)
        .set("hop_level", args.hop_level)
        .set("trace", args.trace)
        .solver(&args.solver);
    manifest.write(&args.out)?;

    let mut w = csv_writer(&args.out, "sim.csv")?;
    w.write_record(["flow", "slots", "failures", "error_rate", "ci", "exact", "bound"])?;
    for (i, (f, &rate)) in net.flows.iter().zip(&rates).enumerate() {
        let phi = SpreadVector::uniform(f.deadline_slots);
        let beta = f.end_to_end_erasure();
        let seed = args.seed.wrapping_add(i as u64);
        let sim_err = |e: Error| Failure::new(EXIT_VALIDATION, format!("flow {}: {e}", f.id));
        let summary = if args.hop_level {
            simulate_hop_level(f, &phi, rate, args.slots, seed).map_err(sim_err)?
        } else if args.trace {
            let (trace, summary) = simulate_flow(f.packet_symbols, beta, &phi, rate, args.slots, seed).map_err(sim_err)?;
            let path = args.out.join(format!("trace_{}.csv", f.id));
            trace.write_csv(std::io::BufWriter::new(fs::File::create(path)?))?;
            summary
        } else {
            simulate_flow_summary(f.packet_symbols, beta, &phi, rate, args.slots, seed).map_err(sim_err)?
        };
        let exact = if phi.len() <= MAX_ENUM_DEADLINE {
            exact_error_probability(&phi, rate, beta).map(num).unwrap_or_default()
        } else {
            String::new()
        };
        w.write_record([
            f.id.clone(),
            args.slots.to_string(),
            summary.failures.to_string(),
            num(summary.error_rate),
            num(summary.ci_halfwidth_windowed),
            exact,
            num(bound_at(rate, beta, f.deadline_slots)),
        ])?;
        println!(
            "{}: rate {rate}, error rate {} +- {}",
            f.id, summary.error_rate, summary.ci_halfwidth_windowed
        );
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Trend {
    Nondecreasing,
    Nonincreasing,
    Constant,
    None,
}

fn trend(values: &[f64]) -> Trend {
    let up = values.windows(2).all(|w| w[1] >= w[0]);
    let down = values.windows(2).all(|w| w[1] <= w[0]);
    match (up, down) {
        (true, true) => Trend::Constant,
        (true, false) => Trend::Nondecreasing,
        (false, true) => Trend::Nonincreasing,
        (false, false) => Trend::None,
    }
}

impl Trend {
    fn as_str(self) -> &'static str {
        match self {
            Trend::Nondecreasing => "nondecreasing",
            Trend::Nonincreasing => "nonincreasing",
            Trend::Constant => "constant",
            Trend::None => "none",
        }
    }
}

pub fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    let net = load(&args.input)?;
    require_valid(&net)?;
    let flow = match &args.flow {
        Some(id) => net
            .flow(id)
            .ok_or_else(|| Failure::new(EXIT_VALIDATION, format!("unknown flow {id}")))?,
        None => &net.flows[0],
    };
    let lambda = match args.lambda {
        Some(l) if l >= 0.0 && l.is_finite() => l,
        Some(l) => return Err(Failure::new(EXIT_PARSE, format!("--lambda {l} must be finite and >= 0"))),
        None => solved_or_fail(&net, &args.solver)?.lambdas[&flow.id],
    };

    prepare_dir(&args.out)?;
    let mut manifest = Manifest::new("sweep");
    manifest
        .path("input", &args.input)
        .path("out", &args.out)
        .set("flow", &flow.id)
        .set("axis", args.axis.as_str())
        .set("range", format!("{}:{}:{}", args.range.lo, args.range.hi, args.range.step))
        .set("lambda", num(lambda))
        .solver(&args.solver);

    let base = FlowProblem::from_flow(flow, lambda);
    let mut w = csv_writer(&args.out, "sweep.csv")?;
    w.write_record(["axis", "value", "rate", "theta", "error", "throughput", "boundary", "status"])?;
    let (mut rates, mut errors) = (Vec::new(), Vec::new());
    for v in args.range.values() {
        let mut prob = base;
        let ok = match args.axis {
            Axis::Deadline => {
                let d = v.round();
                prob.deadline = d as u32;
                (1.0..=f64::from(u32::MAX)).contains(&d)
            }
            Axis::Erasure => {
                prob.erasure = v;
                true
            }
            Axis::Price => {
                prob.price = v;
                true
            }
        };
        let result = if ok {
            solve_flow_rate(&prob, DEFAULT_RATE_TOL).map_err(|e| match e {
                Error::NoRecoveryRegion { rate_min, limit, .. } => Error::NoRecoveryRegion {
                    flow: flow.id.clone(),
                    rate_min,
                    limit,
                },
                e => e,
            })
        } else {
            Err(Error::Domain(format!("deadline {v} must be a positive integer")))
        };
        let value = num(v);
        match result {
            Ok(s) => {
                rates.push(s.rate);
                errors.push(s.error);
                w.write_record([
                    args.axis.as_str().to_string(),
                    value,
                    num(s.rate),
                    num(s.theta),
                    num(s.error),
                    num(f64::from(prob.packet_symbols) * (1.0 - s.error)),
                    s.boundary.as_str().to_string(),
                    "ok".to_string(),
                ])?;
            }
            Err(e) => {
                let status = e.to_string();
                w.write_record([args.axis.as_str(), value.as_str(), "", "", "", "", "", status.as_str()])?;
            }
        }
    }
    w.flush()?;

    let rate_trend = trend(&rates).as_str();
    let error_trend = trend(&errors).as_str();
    let mut t = csv_writer(&args.out, "sweep_trends.csv")?;
    t.write_record(["column", "trend"])?;
    t.write_record(["rate", rate_trend])?;
    t.write_record(["error", error_trend])?;
    t.flush()?;
    manifest.set("rate_trend", rate_trend).set("error_trend", error_trend);
    manifest.write(&args.out)?;
    println!("{} points; rate {rate_trend}, error {error_trend}", rates.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trends() {
        assert_eq!(trend(&[1.0, 2.0, 2.0]), Trend::Nondecreasing);
        assert_eq!(trend(&[3.0, 2.0]), Trend::Nonincreasing);
        assert_eq!(trend(&[1.0, 1.0]), Trend::Constant);
        assert_eq!(trend(&[1.0, 2.0, 1.0]), Trend::None);
    }

    #[test]
    fn bound_outside_region_is_trivial() {
        assert_eq!(bound_at(0.95, 0.1, 3), 1.0);
        assert_eq!(bound_at(0.5, 0.0, 3), 0.0);
        assert!(bound_at(0.5, 0.1, 3) < 1.0);
    }
}
