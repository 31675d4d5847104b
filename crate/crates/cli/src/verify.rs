use erasurenum::flow_solver::Boundary;
use erasurenum::instances::single_tight;
use erasurenum::kernel::{chernoff_bound, error_at_optimum, kl_bernoulli, optimal_theta, ChannelPoint, SpreadVector};
use erasurenum::num::{self, verify_joint_optimality};
use erasurenum::oracle::{
    exact_error_probability, exact_mean_variance, minimize_bound_theta, simplex_grid, JointGrid, MAX_ENUM_DEADLINE,
};
use erasurenum::sim::simulate_flow_summary;
use erasurenum::{Error, NetworkSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::VerifyArgs;
use crate::commands::{load, require_valid, solver_config, solver_failure};
use crate::output::{csv_writer, num, prepare_dir, Manifest};
use crate::{Failure, EXIT_VERIFY};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Skipped,
}

struct Check {
    name: String,
    status: Status,
    measured: Option<f64>,
    threshold: f64,
}

impl Check {
    fn at_most(name: &str, measured: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            status: if measured <= threshold { Status::Pass } else { Status::Fail },
            measured: Some(measured),
            threshold,
        }
    }

    fn at_least(name: &str, measured: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            status: if measured >= threshold { Status::Pass } else { Status::Fail },
            measured: Some(measured),
            threshold,
        }
    }

    fn skipped(name: &str, threshold: f64) -> Self {
        Check {
            name: name.into(),
            status: Status::Skipped,
            measured: None,
            threshold,
        }
    }
}

struct Suite {
    rng: ChaCha8Rng,
    corrupt: bool,
}

impl Suite {
    fn point(&mut self) -> (f64, f64, u32) {
        let beta = self.rng.gen_range(0.01..0.5);
        let rate = self.rng.gen_range(0.05..1.0 - beta - 0.05);
        (beta, rate, self.rng.gen_range(1..=12))
    }

    fn simplex(&mut self, d: usize) -> SpreadVector {
        let raw: Vec<f64> = (0..d).map(|_| -(1.0 - self.rng.gen::<f64>()).ln()).collect();
        let total: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let head: f64 = w[..d - 1].iter().sum();
        w[d - 1] = (1.0 - head).max(0.0);
        SpreadVector::new(w).expect("normalized weights")
    }

    fn bound(&self, phi: &SpreadVector, pt: &ChannelPoint) -> Result<f64, Error> {
        let b = chernoff_bound(phi, pt)?;
        Ok(if self.corrupt { b * 1e-3 } else { b })
    }

    fn bound_dominance(&mut self) -> Result<Check, Error> {
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..200 {
            let (beta, rate, d) = self.point();
            let phi = self.simplex(d as usize);
            let pt = ChannelPoint::new(rate, beta, d)?;
            let theta = optimal_theta(&pt)?;
            let exact = exact_error_probability(&phi, rate, beta)?;
            for t in [theta / 10.0, theta, theta * 10.0] {
                worst = worst.max(exact - self.bound(&phi, &pt.with_theta(t)?)?);
            }
        }
        Ok(Check::at_most("bound_dominance", worst, 0.0))
    }

    fn theta_and_kl(&mut self) -> Result<[Check; 2], Error> {
        let (mut theta_err, mut kl_err) = (0.0f64, 0.0f64);
        for _ in 0..100 {
            let (beta, rate, d) = self.point();
            let pt = ChannelPoint::new(rate, beta, d)?;
            let closed = optimal_theta(&pt)?;
            let phi = SpreadVector::uniform(d);
            let numeric = minimize_bound_theta(&phi, rate, beta)?;
            theta_err = theta_err.max((closed - numeric).abs() / numeric);
            let bound = chernoff_bound(&phi, &pt.with_theta(closed)?)?;
            let kl = (-f64::from(d) * kl_bernoulli(1.0 - rate, beta)?).exp();
            kl_err = kl_err.max((bound - kl).abs());
        }
        Ok([
            Check::at_most("theta_closed_form", theta_err, 1e-6),
            Check::at_most("kl_identity", kl_err, 1e-12),
        ])
    }

    fn equal_split(&mut self) -> Result<Check, Error> {
        let mut gain = f64::NEG_INFINITY;
        for d in 2..=4u32 {
            let grid = simplex_grid(d as usize, 0.05)?;
            for _ in 0..3 {
                let (beta, rate, _) = self.point();
                let pt = ChannelPoint::new(rate, beta, d)?;
                let equal = error_at_optimum(&pt);
                for phi in &grid {
                    let t = minimize_bound_theta(phi, rate, beta)?;
                    gain = gain.max(equal - chernoff_bound(phi, &pt.with_theta(t)?)?);
                }
            }
        }
        Ok(Check::at_most("phi_equal_split", gain, 1e-9))
    }

    fn simulator(&mut self, slots: usize) -> Result<Check, Error> {
        let runs = 20u32;
        let mut inside = 0;
        for i in 0..runs {
            let (beta, rate, d) = self.point();
            let phi = SpreadVector::uniform(d);
            let exact = exact_error_probability(&phi, rate, beta)?;
            let s = simulate_flow_summary(1, beta, &phi, rate, slots, self.rng.gen::<u64>() ^ u64::from(i))?;
            let sigma = exact_mean_variance(&phi, rate, beta, s.packets)?.sqrt();
            if (s.error_rate - exact).abs() <= 3.0 * sigma {
                inside += 1;
            }
        }
        Ok(Check::at_least("simulator_within_3sigma_fraction", f64::from(inside) / f64::from(runs), 0.9))
    }
}

fn small_enough(net: &NetworkSpec) -> bool {
    (1..=2).contains(&net.flows.len()) && net.flows.iter().all(|f| f.deadline_slots <= 4)
}

fn instance_checks(net: &NetworkSpec, args: &VerifyArgs, checks: &mut Vec<Check>) -> Result<(), Failure> {
    let cfg = solver_config(&args.solver);
    let rep = num::solve(net, &cfg).map_err(solver_failure)?;
    checks.push(Check::at_least(
        "instance_converged",
        if rep.converged() { 1.0 } else { 0.0 },
        1.0,
    ));

    let mut worst = None::<f64>;
    for f in &net.flows {
        let d = f.deadline_slots;
        let beta = f.end_to_end_erasure();
        let rate = rep.allocation[&f.id].rate;
        if d as usize > MAX_ENUM_DEADLINE || beta == 0.0 {
            continue;
        }
        let phi = SpreadVector::uniform(d);
        let exact = exact_error_probability(&phi, rate, beta).map_err(solver_failure)?;
        let mut bound = error_at_optimum(&ChannelPoint::new(rate, beta, d).map_err(solver_failure)?);
        if args.corrupt_bound {
            bound *= 1e-3;
        }
        worst = Some(worst.unwrap_or(f64::NEG_INFINITY).max(exact - bound));
    }
    checks.push(match worst {
        Some(w) => Check::at_most("instance_bound_dominance", w, 0.0),
        None => Check::skipped("instance_bound_dominance", 0.0),
    });

    let mut kkt = 0.0f64;
    for f in &net.flows {
        let s = &rep.allocation[&f.id];
        if s.boundary == Boundary::Interior {
            let scale = (rep.lambdas[&f.id] * f64::from(f.packet_symbols) / (s.rate * s.rate)).max(1.0);
            kkt = kkt.max(s.kkt_residual / scale);
        }
    }
    checks.push(Check::at_most("instance_kkt_residual", kkt, 1e-6));

    let primal = rep.feasible_utility;
    let rounding = 8.0 * f64::EPSILON * primal.abs();
    let gap = rep.trace.iter().map(|r| r.dual - primal + rounding).fold(f64::INFINITY, f64::min);
    checks.push(Check::at_least("instance_weak_duality", gap, 0.0));
    let cs = rep.prices.iter().map(|(c, p)| p * rep.slacks[c]).fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most("instance_complementary_slackness", cs, 10.0 * cfg.feas_tol));

    if small_enough(net) {
        let grid = JointGrid {
            rate_mesh: args.mesh,
            ..JointGrid::default()
        };
        let jc = verify_joint_optimality(net, &rep, &grid, 1e-3).map_err(solver_failure)?;
        checks.push(Check::at_most("instance_joint_optimality", jc.excess, 1e-3));
    } else {
        checks.push(Check::skipped("instance_joint_optimality", 1e-3));
    }
    Ok(())
}

pub fn run(args: &VerifyArgs) -> Result<(), Failure> {
    if !(args.mesh >= 0.01 && args.mesh <= 1.0) {
        return Err(Failure::new(crate::EXIT_PARSE, format!("--mesh {} outside [0.01, 1]", args.mesh)));
    }
    let net = args.input.as_deref().map(load).transpose()?;
    if let Some(net) = &net {
        require_valid(net)?;
    }
    prepare_dir(&args.out)?;
    let mut manifest = Manifest::new("verify");
    if let Some(p) = &args.input {
        manifest.path("input", p);
    }
    manifest
        .path("out", &args.out)
        .set("seed", args.seed)
        .set("slots", args.slots)
        .set("mesh", args.mesh)
        .solver(&args.solver);
    if args.corrupt_bound {
        manifest.set("corrupt_bound", true);
    }
    manifest.write(&args.out)?;

    let mut suite = Suite {
        rng: ChaCha8Rng::seed_from_u64(args.seed),
        corrupt: args.corrupt_bound,
    };
    let oracle = |e: Error| Failure::new(EXIT_VERIFY, format!("oracle error: {e}"));
    let mut checks = vec![suite.bound_dominance().map_err(oracle)?];
    checks.extend(suite.theta_and_kl().map_err(oracle)?);
    checks.push(suite.equal_split().map_err(oracle)?);
    checks.push(suite.simulator(args.slots).map_err(oracle)?);

    match &net {
        Some(net) => instance_checks(net, args, &mut checks)?,
        None => instance_checks(&single_tight(), args, &mut checks)?,
    }

    let mut w = csv_writer(&args.out, "verify.csv")?;
    w.write_record(["check", "status", "measured", "threshold"])?;
    for c in &checks {
        let status = match c.status {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skipped => "skipped",
        };
        w.write_record([
            c.name.clone(),
            status.to_string(),
            c.measured.map(num).unwrap_or_default(),
            num(c.threshold),
        ])?;
        println!("{status:>7}  {}", c.name);
    }
    w.flush()?;

    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| c.status == Status::Fail)
        .map(|c| c.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_VERIFY, format!("failed checks: {}", failed.join(", "))))
    }
}
