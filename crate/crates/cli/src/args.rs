use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "erasurenum", version, about = "Coding-rate allocation for multi-hop erasure networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and check a network file.
    Validate(ValidateArgs),
    /// Solve for proportional-fair coding rates.
    Solve(SolveArgs),
    /// Monte Carlo decode-failure rates at solved or given rates.
    Simulate(SimulateArgs),
    /// Run the oracle checks.
    Verify(VerifyArgs),
    /// Re-solve one flow along a parameter axis.
    Sweep(SweepArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Solve(_) => "solve",
            Command::Simulate(_) => "simulate",
            Command::Verify(_) => "verify",
            Command::Sweep(_) => "sweep",
        }
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, short)]
    pub input: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct SolverOpts {
    /// Constant price step; the default is the curvature-scaled step with line search.
    #[arg(long)]
    pub step: Option<f64>,
    /// Use `step / sqrt(i)` instead of a constant step.
    #[arg(long, requires = "step")]
    pub diminishing: bool,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub feas_tol: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub price_tol: f64,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverOpts,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1_000_000)]
    pub slots: usize,
    /// Base seed; flow `i` uses `seed + i`.
    #[arg(long, env = "ERASURENUM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Explicit rates, e.g. `f1=0.3,f2=0.25`; unlisted flows use solved rates.
    #[arg(long)]
    pub rates: Option<Rates>,
    /// Draw erasures per hop instead of end to end.
    #[arg(long)]
    pub hop_level: bool,
    /// Also write `trace_<flow>.csv` with per-slot erasures and decodes.
    #[arg(long, conflicts_with = "hop_level")]
    pub trace: bool,
    #[command(flatten)]
    pub solver: SolverOpts,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Instance to check in addition to the built-in random suite.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, env = "ERASURENUM_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200_000)]
    pub slots: usize,
    /// Rate mesh of the joint grid search.
    #[arg(long, default_value_t = 0.02)]
    pub mesh: f64,
    /// Scale every bound down before comparing (negative control).
    #[arg(long, hide = true)]
    pub corrupt_bound: bool,
    #[command(flatten)]
    pub solver: SolverOpts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Deadline,
    Erasure,
    Price,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Deadline => "deadline",
            Axis::Erasure => "erasure",
            Axis::Price => "price",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.lo + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

impl FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, step] = parts.as_slice() else {
            return Err(format!("expected LO:HI:STEP, got {s:?}"));
        };
        let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
        let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
        if ![lo, hi, step].iter().all(|v| v.is_finite()) {
            return Err("range bounds must be finite".into());
        }
        if step <= 0.0 || hi < lo {
            return Err(format!("range {s:?} must be nonempty and increasing"));
        }
        Ok(Range { lo, hi, step })
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[arg(long)]
    pub range: Range,
    /// Flow to sweep; defaults to the first flow.
    #[arg(long)]
    pub flow: Option<String>,
    /// Fixed route price; defaults to the flow's price at the network optimum.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub solver: SolverOpts,
}

/// `FLOW=RATE` pairs in command-line order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rates(pub Vec<(String, f64)>);

impl FromStr for Rates {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_rates(s).map(Rates)
    }
}

fn parse_rates(s: &str) -> Result<Vec<(String, f64)>, String> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (id, v) = t.split_once('=').ok_or_else(|| format!("expected FLOW=RATE, got {t:?}"))?;
            let v: f64 = v.trim().parse().map_err(|e| format!("{v:?}: {e}"))?;
            if !(v > 0.0 && v < 1.0) {
                return Err(format!("rate {v} for {id} outside (0, 1)"));
            }
            Ok((id.trim().to_string(), v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        let r: Range = "1:10:1".parse().unwrap();
        assert_eq!(r.values().len(), 10);
        let r: Range = "0:0.001:0.0001".parse().unwrap();
        assert_eq!(r.values().len(), 11);
        assert!("1:0:1".parse::<Range>().is_err());
        assert!("0:1:0".parse::<Range>().is_err());
        assert!("0:1".parse::<Range>().is_err());
        assert_eq!("2:2:1".parse::<Range>().unwrap().values(), vec![2.0]);
        assert_eq!("0.01:0.2:0.05".parse::<Range>().unwrap().values()[1], 0.06);
    }

    #[test]
    fn rates_parsing() {
        assert_eq!(
            parse_rates("f1=0.3, f2=0.25").unwrap(),
            vec![("f1".to_string(), 0.3), ("f2".to_string(), 0.25)]
        );
        assert!(parse_rates("f1").is_err());
        assert!(parse_rates("f1=1.5").is_err());
        assert_eq!("a=0.5".parse::<Rates>().unwrap().0.len(), 1);
    }

    #[test]
    fn clap_config_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
