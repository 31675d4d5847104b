use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::args::SolverOpts;
use crate::Failure;

pub fn prepare_dir(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::new(crate::EXIT_PARSE, format!("{}: {e}", out.display())))
}

pub fn csv_writer(out: &Path, name: &str) -> Result<csv::Writer<fs::File>, Failure> {
    let path = out.join(name);
    csv::Writer::from_path(&path).map_err(|e| Failure::new(crate::EXIT_PARSE, format!("{}: {e}", path.display())))
}

/// Shortest round-trip representation, in exponent form when very small or large.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Effective settings of a run, echoed to `manifest.txt`.
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest { entries: Vec::new() };
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn path(&mut self, key: &str, value: &Path) -> &mut Self {
        self.set(key, value.display())
    }

    pub fn solver(&mut self, opts: &SolverOpts) -> &mut Self {
        let step = match (opts.step, opts.diminishing) {
            (None, _) => "scaled".to_string(),
            (Some(g), false) => format!("constant:{g}"),
            (Some(g), true) => format!("diminishing:{g}"),
        };
        self.set("step", step)
            .set("iters", opts.iters)
            .set("feas_tol", num(opts.feas_tol))
            .set("price_tol", num(opts.price_tol))
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf, Failure> {
        let path = out.join("manifest.txt");
        let mut f = fs::File::create(&path)?;
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(path)
    }
}
