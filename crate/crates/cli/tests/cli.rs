use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erasurenum"))
        .args(args)
        .env_remove("ERASURENUM_SEED")
        .output()
        .expect("spawn erasurenum")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Runs `cmd -i <data> -o <tmp> extra...` and returns the output dir.
fn run_in(cmd: &str, input: &str, extra: &[&str]) -> (TempDir, Output) {
    let dir = TempDir::new().unwrap();
    let input = data(input);
    let mut args = vec![cmd, "-i", input.to_str().unwrap(), "-o", dir.path().to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = run(&args);
    (dir, out)
}

fn read_csv(path: &Path) -> Vec<HashMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            header.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()
        })
        .collect()
}

fn f(row: &HashMap<String, String>, col: &str) -> f64 {
    row[col].parse().unwrap_or_else(|e| panic!("{col}={:?}: {e}", row[col]))
}

fn by_key<'a>(rows: &'a [HashMap<String, String>], key: &str, id: &str) -> &'a HashMap<String, String> {
    rows.iter().find(|r| r[key] == id).unwrap_or_else(|| panic!("no {key}={id}"))
}

fn manifest(dir: &Path) -> HashMap<String, String> {
    fs::read_to_string(dir.join("manifest.txt"))
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn validate_exit_codes() {
    let ok = run(&["validate", "-i", data("parking_lot.net").to_str().unwrap()]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("2 cells, 3 flows"));

    let bad = run(&["validate", "-i", data("bad_syntax.net").to_str().unwrap()]);
    assert_eq!(code(&bad), 1);
    assert!(stderr(&bad).contains("line 4"), "{}", stderr(&bad));

    let over = run(&["validate", "-i", data("overloaded.net").to_str().unwrap()]);
    assert_eq!(code(&over), 2);
    assert!(stderr(&over).contains("busy"), "{}", stderr(&over));

    let missing = run(&["validate", "-i", "/nonexistent/net.txt"]);
    assert_eq!(code(&missing), 1);
}

#[test]
fn invalid_network_is_refused_by_every_command() {
    for cmd in ["solve", "simulate", "sweep", "verify"] {
        let extra: &[&str] = if cmd == "sweep" { &["--axis", "price", "--range", "0:1:1"] } else { &[] };
        let (dir, out) = run_in(cmd, "overloaded.net", extra);
        assert_eq!(code(&out), 2, "{cmd}: {}", stderr(&out));
        assert!(!dir.path().join("solution.csv").exists());
    }
}

#[test]
fn solve_symmetric_network() {
    let (dir, out) = run_in("solve", "parking_lot.net", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sol = read_csv(&dir.path().join("solution.csv"));
    assert_eq!(sol.len(), 3);
    let (f1, f2, f3) = (by_key(&sol, "flow", "f1"), by_key(&sol, "flow", "f2"), by_key(&sol, "flow", "f3"));
    assert!((f(f1, "rate") - f(f3, "rate")).abs() < 1e-9);
    assert!((f(f2, "lambda") - 2.0 * f(f1, "lambda")).abs() < 1e-6 * f(f2, "lambda"));
    for r in &sol {
        let k = 100.0;
        assert!((f(r, "throughput") - k * (1.0 - f(r, "error"))).abs() < 1e-9);
        assert_eq!(f(r, "integer_codeword"), (k / f(r, "rate")).ceil());
    }
    let cells = read_csv(&dir.path().join("cells.csv"));
    let (pa, pb) = (f(by_key(&cells, "cell", "a"), "price"), f(by_key(&cells, "cell", "b"), "price"));
    assert!(pa > 0.0 && (pa - pb).abs() < 1e-6);

    let trace = read_csv(&dir.path().join("trace.csv"));
    assert!(!trace.is_empty());
    let m = manifest(dir.path());
    assert_eq!(m["command"], "solve");
    assert_eq!(m["step"], "scaled");
    assert_eq!(m["iters"], "5000");
}

#[test]
fn solve_leaves_slack_cell_unpriced() {
    let (dir, out) = run_in("solve", "two_cell.net", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cells = read_csv(&dir.path().join("cells.csv"));
    let a = by_key(&cells, "cell", "a");
    assert_eq!(f(a, "price"), 0.0);
    assert!(f(a, "slack") > 0.0);
    assert!(f(by_key(&cells, "cell", "b"), "price") > 0.0);
}

#[test]
fn solve_ample_capacity_sits_at_min_rate() {
    let (dir, out) = run_in("solve", "single_ample.net", &[]);
    assert_eq!(code(&out), 0);
    let sol = read_csv(&dir.path().join("solution.csv"));
    assert_eq!(f(&sol[0], "rate"), 0.1);
    assert_eq!(sol[0]["boundary"], "at_min");

    let (dir, _) = run_in("solve", "single_tight.net", &[]);
    let sol = read_csv(&dir.path().join("solution.csv"));
    assert!((f(&sol[0], "rate") - 0.25).abs() < 1e-6);
    assert_eq!(sol[0]["boundary"], "interior");
}

#[test]
fn solve_reports_no_convergence() {
    let (dir, out) = run_in("solve", "parking_lot.net", &["--iters", "2"]);
    assert_eq!(code(&out), 3);
    assert!(dir.path().join("solution.csv").exists());
    assert_eq!(manifest(dir.path())["iters"], "2");
}

#[test]
fn solve_with_constant_step() {
    let (dir, out) = run_in("solve", "two_cell.net", &["--step", "0.05", "--iters", "20000"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(manifest(dir.path())["step"], "constant:0.05");
    let (_, scaled) = run_in("solve", "two_cell.net", &[]);
    assert_eq!(code(&scaled), 0);
}

#[test]
fn solve_is_deterministic() {
    let (a, _) = run_in("solve", "parking_lot.net", &[]);
    let (b, _) = run_in("solve", "parking_lot.net", &[]);
    for name in ["solution.csv", "cells.csv", "trace.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn simulate_lossless_never_fails() {
    let (dir, out) = run_in("simulate", "lossless.net", &["--slots", "5000", "--trace"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sim = read_csv(&dir.path().join("sim.csv"));
    assert_eq!(f(&sim[0], "failures"), 0.0);
    let trace = read_csv(&dir.path().join("trace_f.csv"));
    assert_eq!(trace.len(), 5000);
    assert!(trace.iter().all(|r| r["erasure"] == "0"));
}

#[test]
fn simulate_error_rate_is_below_bound() {
    let (dir, out) = run_in("simulate", "single_tight.net", &["--slots", "300000", "--seed", "11"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sim = read_csv(&dir.path().join("sim.csv"));
    let r = &sim[0];
    assert!(f(r, "bound") >= f(r, "error_rate") - f(r, "ci"));
    assert!((f(r, "error_rate") - f(r, "exact")).abs() <= f(r, "ci"));
    assert_eq!(manifest(dir.path())["seed"], "11");
}

#[test]
fn simulate_seed_controls_stream() {
    let (a, _) = run_in("simulate", "parking_lot.net", &["--slots", "20000", "--seed", "3"]);
    let (b, _) = run_in("simulate", "parking_lot.net", &["--slots", "20000", "--seed", "3"]);
    let (c, _) = run_in("simulate", "parking_lot.net", &["--slots", "20000", "--seed", "4"]);
    let sim = |d: &TempDir| fs::read(d.path().join("sim.csv")).unwrap();
    assert_eq!(sim(&a), sim(&b));
    assert_ne!(sim(&a), sim(&c));

    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_erasurenum"))
        .args(["simulate", "-i", data("parking_lot.net").to_str().unwrap()])
        .args(["-o", dir.path().to_str().unwrap(), "--slots", "20000"])
        .env("ERASURENUM_SEED", "3")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(sim(&a), fs::read(dir.path().join("sim.csv")).unwrap());
}

#[test]
fn simulate_with_explicit_rates_and_hops() {
    let (dir, out) = run_in(
        "simulate",
        "parking_lot.net",
        &["--slots", "200000", "--hop-level", "--rates", "f1=0.3,f2=0.3,f3=0.3"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sim = read_csv(&dir.path().join("sim.csv"));
    for r in &sim {
        assert!((f(r, "error_rate") - f(r, "exact")).abs() <= f(r, "ci") + 1e-12, "{r:?}");
    }
    assert_eq!(manifest(dir.path())["hop_level"], "true");

    let (_, out) = run_in("simulate", "parking_lot.net", &["--rates", "nope=0.3"]);
    assert_eq!(code(&out), 2);
    let (_, out) = run_in("simulate", "parking_lot.net", &["--rates", "f1=1.3"]);
    assert_eq!(code(&out), 1);
    let (_, out) = run_in("simulate", "parking_lot.net", &["--hop-level", "--trace"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn simulate_long_deadline_has_no_exact_column_value() {
    let (dir, out) = run_in("simulate", "long_deadline.net", &["--slots", "10000"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sim = read_csv(&dir.path().join("sim.csv"));
    assert_eq!(sim[0]["exact"], "");
    assert!(f(&sim[0], "bound") > 0.0);
}

#[test]
fn sweep_deadline_axis() {
    let (dir, out) = run_in("sweep", "single_tight.net", &["--axis", "deadline", "--range", "1:8:1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 8);
    for w in rows.windows(2) {
        assert!(f(&w[1], "rate") >= f(&w[0], "rate") - 1e-12);
        assert!(f(&w[1], "error") <= f(&w[0], "error") + 1e-12);
    }
    let trends = read_csv(&dir.path().join("sweep_trends.csv"));
    assert_eq!(by_key(&trends, "column", "rate")["trend"], "nondecreasing");
    let m = manifest(dir.path());
    assert_eq!(m["axis"], "deadline");
    assert_eq!(m["flow"], "f");
}

#[test]
fn sweep_erasure_axis() {
    let (dir, out) = run_in("sweep", "single_tight.net", &["--axis", "erasure", "--range", "0.01:0.2:0.05"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1]["value"], "0.06");
    for w in rows.windows(2) {
        assert!(f(&w[1], "error") >= f(&w[0], "error"));
    }
}

#[test]
fn sweep_price_axis_is_monotone_in_rate() {
    let (dir, out) = run_in(
        "sweep",
        "parking_lot.net",
        &["--axis", "price", "--range", "0:0.01:0.001", "--flow", "f2"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 11);
    assert_eq!(f(&rows[0], "rate"), 0.15);
    for w in rows.windows(2) {
        assert!(f(&w[1], "rate") >= f(&w[0], "rate"));
    }
    assert_eq!(manifest(dir.path())["flow"], "f2");
}

#[test]
fn sweep_rejects_bad_arguments() {
    let (_, out) = run_in("sweep", "single_tight.net", &["--axis", "deadline", "--range", "5:1:1"]);
    assert_eq!(code(&out), 1);
    let (_, out) = run_in("sweep", "single_tight.net", &["--axis", "price", "--range", "0:1:1", "--flow", "zz"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sweep_records_out_of_domain_points() {
    let (dir, out) = run_in("sweep", "single_tight.net", &["--axis", "erasure", "--range", "0.85:0.95:0.05"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["status"], "ok");
    assert_eq!(rows[0]["boundary"], "at_min");
    for r in &rows[1..] {
        assert!(r["status"].contains("flow f: no recovery region"), "{r:?}");
        assert_eq!(r["rate"], "");
    }
}

#[test]
fn verify_default_suite_passes() {
    let dir = TempDir::new().unwrap();
    let out = run(&["verify", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = read_csv(&dir.path().join("verify.csv"));
    assert!(rows.len() >= 10);
    assert!(rows.iter().all(|r| r["status"] == "pass"), "{rows:?}");
    assert_eq!(manifest(dir.path())["command"], "verify");
}

#[test]
fn verify_skips_enumeration_for_long_deadlines() {
    let (dir, out) = run_in("verify", "long_deadline.net", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = read_csv(&dir.path().join("verify.csv"));
    let r = by_key(&rows, "check", "instance_bound_dominance");
    assert_eq!(r["status"], "skipped");
    assert_eq!(r["measured"], "");
}

#[test]
fn verify_checks_given_instance() {
    let (dir, out) = run_in("verify", "two_cell.net", &["--seed", "9"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = read_csv(&dir.path().join("verify.csv"));
    assert_eq!(by_key(&rows, "check", "instance_joint_optimality")["status"], "pass");
}

#[test]
fn verify_catches_corrupted_bound() {
    let dir = TempDir::new().unwrap();
    let out = run(&["verify", "-o", dir.path().to_str().unwrap(), "--corrupt-bound"]);
    assert_eq!(code(&out), 4);
    let rows = read_csv(&dir.path().join("verify.csv"));
    assert_eq!(by_key(&rows, "check", "bound_dominance")["status"], "fail");
}

#[test]
fn help_and_version() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["validate", "solve", "simulate", "verify", "sweep"] {
        assert!(text.contains(cmd));
    }
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 1);
}
