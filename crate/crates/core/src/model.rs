//! Network data model: cells with TDMA schedule periods, unicast flows routed
//! over ordered lists of cells, and the line-oriented description format.
//!
//! ```text
//! # two cells, one two-hop flow
//! cell a period=1.0
//! cell b period=1.0
//! flow f1 k=100 D=4 rmin=0.05 rmax=0.95
//! hop f1 cell=a w=1000 beta=0.1
//! hop f1 cell=b w=1000 beta=0.1
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::error::{Error, Result};

/// A TDMA interference domain and its schedule period `T_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub id: String,
    pub period: f64,
}

/// One hop of a flow's route: the cell crossed, the PHY rate used there, and
/// the per-hop packet erasure probability.
#[derive(Debug, Clone, PartialEq)]
pub struct HopSpec {
    pub cell: String,
    pub phy_rate: f64,
    pub erasure_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub id: String,
    /// Information symbols per packet (`k_f`).
    pub packet_symbols: u32,
    /// Decoding deadline in slots (`D_f`), also the spreading horizon.
    pub deadline_slots: u32,
    pub route: Vec<HopSpec>,
    pub rate_min: f64,
    pub rate_max: f64,
}

impl FlowSpec {
    /// End-to-end erasure probability of the route.
    pub fn end_to_end_erasure(&self) -> f64 {
        end_to_end_erasure(self)
    }

    pub fn hop_in(&self, cell: &str) -> Option<&HopSpec> {
        self.route.iter().find(|h| h.cell == cell)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkSpec {
    pub cells: Vec<CellSpec>,
    pub flows: Vec<FlowSpec>,
}

/// `1 - prod(1 - beta_hop)` over the route.
pub fn end_to_end_erasure(flow: &FlowSpec) -> f64 {
    let survive: f64 = flow.route.iter().map(|h| 1.0 - h.erasure_prob).product();
    (1.0 - survive).clamp(0.0, 1.0)
}

impl NetworkSpec {
    pub fn cell(&self, id: &str) -> Option<&CellSpec> {
        self.cells.iter().find(|c| c.id == id)
    }

    pub fn cell_index(&self, id: &str) -> Option<usize> {
        self.cells.iter().position(|c| c.id == id)
    }

    pub fn flow(&self, id: &str) -> Option<&FlowSpec> {
        self.flows.iter().find(|f| f.id == id)
    }

    pub fn flow_mut(&mut self, id: &str) -> Option<&mut FlowSpec> {
        self.flows.iter_mut().find(|f| f.id == id)
    }

    /// Flows routed through `cell`.
    pub fn flows_in_cell(&self, cell: &str) -> Result<BTreeSet<String>> {
        if self.cell(cell).is_none() {
            return Err(Error::UnknownCell(cell.to_string()));
        }
        Ok(self
            .flows
            .iter()
            .filter(|f| f.hop_in(cell).is_some())
            .map(|f| f.id.clone())
            .collect())
    }

    /// Airtime demanded in `cell` when every flow uses the rate returned by `rate_of`.
    pub fn airtime_demand(&self, cell: &str, mut rate_of: impl FnMut(&FlowSpec) -> f64) -> f64 {
        self.flows
            .iter()
            .filter_map(|f| f.hop_in(cell).map(|h| (f, h)))
            .map(|(f, h)| f64::from(f.packet_symbols) / (rate_of(f) * h.phy_rate))
            .sum()
    }

    /// Structural and feasibility checks. Collects every violation.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();

        let mut seen = HashSet::new();
        for c in &self.cells {
            if !seen.insert(c.id.as_str()) {
                out.push(Diagnostic::DuplicateCell(c.id.clone()));
            }
            if !(c.period > 0.0 && c.period.is_finite()) {
                out.push(Diagnostic::InvalidField {
                    item: c.id.clone(),
                    field: "period",
                    value: c.period,
                });
            }
        }

        if self.flows.is_empty() {
            out.push(Diagnostic::NoFlows);
        }

        let mut seen = HashSet::new();
        for f in &self.flows {
            if !seen.insert(f.id.as_str()) {
                out.push(Diagnostic::DuplicateFlow(f.id.clone()));
            }
            if f.packet_symbols == 0 {
                out.push(Diagnostic::InvalidField {
                    item: f.id.clone(),
                    field: "k",
                    value: 0.0,
                });
            }
            if f.deadline_slots == 0 {
                out.push(Diagnostic::InvalidField {
                    item: f.id.clone(),
                    field: "D",
                    value: 0.0,
                });
            }
            let rates_ok = f.rate_min > 0.0 && f.rate_min <= f.rate_max && f.rate_max <= 1.0;
            if !rates_ok {
                out.push(Diagnostic::InvalidRateBounds {
                    flow: f.id.clone(),
                    rate_min: f.rate_min,
                    rate_max: f.rate_max,
                });
            }
            if f.route.is_empty() {
                out.push(Diagnostic::EmptyRoute(f.id.clone()));
            }
            let mut on_route = HashSet::new();
            for h in &f.route {
                if self.cell(&h.cell).is_none() {
                    out.push(Diagnostic::UnknownCell {
                        flow: f.id.clone(),
                        cell: h.cell.clone(),
                    });
                }
                if !on_route.insert(h.cell.as_str()) {
                    out.push(Diagnostic::RepeatedCellInRoute {
                        flow: f.id.clone(),
                        cell: h.cell.clone(),
                    });
                }
                if !(h.phy_rate > 0.0 && h.phy_rate.is_finite()) {
                    out.push(Diagnostic::InvalidField {
                        item: format!("{}@{}", f.id, h.cell),
                        field: "w",
                        value: h.phy_rate,
                    });
                }
                if !(0.0..=1.0).contains(&h.erasure_prob) {
                    out.push(Diagnostic::InvalidField {
                        item: format!("{}@{}", f.id, h.cell),
                        field: "beta",
                        value: h.erasure_prob,
                    });
                }
            }
            let beta = end_to_end_erasure(f);
            if rates_ok && !f.route.is_empty() && f.rate_min >= 1.0 - beta {
                out.push(Diagnostic::NoRecoveryRegion {
                    flow: f.id.clone(),
                    beta,
                    rate_min: f.rate_min,
                });
            }
        }

        // Capacity at maximal rates only makes sense once the structure is sound.
        if out.is_empty() {
            for c in &self.cells {
                let demand = self.airtime_demand(&c.id, |f| f.rate_max);
                if demand > c.period {
                    out.push(Diagnostic::CapacityExceeded {
                        cell: c.id.clone(),
                        demand,
                        period: c.period,
                    });
                }
            }
        }
        out
    }

    /// Serialises to the description format; `parse_network` reads it back unchanged.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cells {
            writeln!(f, "cell {} period={:?}", c.id, c.period)?;
        }
        for fl in &self.flows {
            writeln!(
                f,
                "flow {} k={} D={} rmin={:?} rmax={:?}",
                fl.id, fl.packet_symbols, fl.deadline_slots, fl.rate_min, fl.rate_max
            )?;
        }
        for fl in &self.flows {
            for h in &fl.route {
                writeln!(
                    f,
                    "hop {} cell={} w={:?} beta={:?}",
                    fl.id, h.cell, h.phy_rate, h.erasure_prob
                )?;
            }
        }
        Ok(())
    }
}

/// A single validation finding.
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    NoFlows,
    DuplicateCell(String),
    DuplicateFlow(String),
    EmptyRoute(String),
    UnknownCell { flow: String, cell: String },
    RepeatedCellInRoute { flow: String, cell: String },
    InvalidField { item: String, field: &'static str, value: f64 },
    InvalidRateBounds { flow: String, rate_min: f64, rate_max: f64 },
    NoRecoveryRegion { flow: String, beta: f64, rate_min: f64 },
    CapacityExceeded { cell: String, demand: f64, period: f64 },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::NoFlows => write!(f, "network declares no flows"),
            Diagnostic::DuplicateCell(id) => write!(f, "duplicate cell id {id}"),
            Diagnostic::DuplicateFlow(id) => write!(f, "duplicate flow id {id}"),
            Diagnostic::EmptyRoute(id) => write!(f, "flow {id} has an empty route"),
            Diagnostic::UnknownCell { flow, cell } => {
                write!(f, "flow {flow} routes through undeclared cell {cell}")
            }
            Diagnostic::RepeatedCellInRoute { flow, cell } => {
                write!(f, "flow {flow} visits cell {cell} more than once")
            }
            Diagnostic::InvalidField { item, field, value } => {
                write!(f, "{item}: {field}={value} out of range")
            }
            Diagnostic::InvalidRateBounds {
                flow,
                rate_min,
                rate_max,
            } => write!(
                f,
                "flow {flow}: need 0 < rmin <= rmax <= 1, got rmin={rate_min} rmax={rate_max}"
            ),
            Diagnostic::NoRecoveryRegion {
                flow,
                beta,
                rate_min,
            } => write!(
                f,
                "flow {flow}: no recovery region, rmin={rate_min} >= 1 - beta = {}",
                1.0 - beta
            ),
            Diagnostic::CapacityExceeded {
                cell,
                demand,
                period,
            } => write!(
                f,
                "cell {cell}: airtime at maximal rates {demand} exceeds period {period}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown cell {0}")]
    UnknownCell(String),
    #[error("unknown flow {0}")]
    UnknownFlow(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("flow {flow} visits cell {cell} more than once")]
    DuplicateCellInRoute { flow: String, cell: String },
    #[error("{field} out of range: {value}")]
    OutOfRange { field: String, value: String },
    #[error("flow {0} has no hops")]
    EmptyRoute(String),
    #[error("network declares no flows")]
    NoFlows,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    /// 1-based; 0 for whole-document errors.
    pub line: usize,
    pub kind: ParseErrorKind,
}

fn perr(line: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, kind }
}

struct Fields<'a> {
    line: usize,
    pairs: HashMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn new(line: usize, tokens: &[&'a str], allowed: &[&str]) -> std::result::Result<Self, ParseError> {
        let mut pairs = HashMap::new();
        for tok in tokens {
            let (k, v) = tok.split_once('=').ok_or_else(|| {
                perr(line, ParseErrorKind::Syntax(format!("expected key=value, got {tok:?}")))
            })?;
            if !allowed.contains(&k) {
                return Err(perr(line, ParseErrorKind::Syntax(format!("unknown key {k:?}"))));
            }
            if pairs.insert(k, v).is_some() {
                return Err(perr(line, ParseErrorKind::Syntax(format!("key {k:?} repeated"))));
            }
        }
        for k in allowed {
            if !pairs.contains_key(k) {
                return Err(perr(line, ParseErrorKind::Syntax(format!("missing key {k:?}"))));
            }
        }
        Ok(Fields { line, pairs })
    }

    fn raw(&self, key: &str) -> &'a str {
        self.pairs[key]
    }

    fn float(&self, key: &str) -> std::result::Result<f64, ParseError> {
        let raw = self.raw(key);
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(perr(
                self.line,
                ParseErrorKind::Syntax(format!("{key}: not a finite number: {raw:?}")),
            )),
        }
    }

    fn int(&self, key: &str) -> std::result::Result<u32, ParseError> {
        let raw = self.raw(key);
        raw.parse::<u32>().map_err(|_| {
            perr(
                self.line,
                ParseErrorKind::Syntax(format!("{key}: not a non-negative integer: {raw:?}")),
            )
        })
    }

    fn out_of_range(&self, key: &str) -> ParseError {
        perr(
            self.line,
            ParseErrorKind::OutOfRange {
                field: key.to_string(),
                value: self.raw(key).to_string(),
            },
        )
    }
}

fn check_id(line: usize, id: &str) -> std::result::Result<(), ParseError> {
    if id.contains('=') {
        return Err(perr(line, ParseErrorKind::Syntax(format!("bad identifier {id:?}"))));
    }
    Ok(())
}

/// Parses a network description document.
pub fn parse_network(text: &str) -> std::result::Result<NetworkSpec, ParseError> {
    let mut net = NetworkSpec::default();
    // hop cell references are resolved once the whole document is read
    let mut hop_lines: Vec<(usize, String)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let Some((&kw, rest)) = tokens.split_first() else {
            continue;
        };
        match kw {
            "cell" => {
                let (&id, kv) = rest
                    .split_first()
                    .ok_or_else(|| perr(line, ParseErrorKind::Syntax("cell needs an id".into())))?;
                check_id(line, id)?;
                let fields = Fields::new(line, kv, &["period"])?;
                let period = fields.float("period")?;
                if period <= 0.0 {
                    return Err(fields.out_of_range("period"));
                }
                if net.cell(id).is_some() {
                    return Err(perr(line, ParseErrorKind::DuplicateId(id.to_string())));
                }
                net.cells.push(CellSpec {
                    id: id.to_string(),
                    period,
                });
            }
            "flow" => {
                let (&id, kv) = rest
                    .split_first()
                    .ok_or_else(|| perr(line, ParseErrorKind::Syntax("flow needs an id".into())))?;
                check_id(line, id)?;
                let fields = Fields::new(line, kv, &["k", "D", "rmin", "rmax"])?;
                let k = fields.int("k")?;
                if k == 0 {
                    return Err(fields.out_of_range("k"));
                }
                let d = fields.int("D")?;
                if d == 0 {
                    return Err(fields.out_of_range("D"));
                }
                let rmin = fields.float("rmin")?;
                if !(rmin > 0.0 && rmin <= 1.0) {
                    return Err(fields.out_of_range("rmin"));
                }
                let rmax = fields.float("rmax")?;
                if !(rmax > 0.0 && rmax <= 1.0) || rmax < rmin {
                    return Err(fields.out_of_range("rmax"));
                }
                if net.flow(id).is_some() {
                    return Err(perr(line, ParseErrorKind::DuplicateId(id.to_string())));
                }
                net.flows.push(FlowSpec {
                    id: id.to_string(),
                    packet_symbols: k,
                    deadline_slots: d,
                    route: Vec::new(),
                    rate_min: rmin,
                    rate_max: rmax,
                });
            }
            "hop" => {
                let (&flow_id, kv) = rest
                    .split_first()
                    .ok_or_else(|| perr(line, ParseErrorKind::Syntax("hop needs a flow id".into())))?;
                let fields = Fields::new(line, kv, &["cell", "w", "beta"])?;
                let cell = fields.raw("cell").to_string();
                let w = fields.float("w")?;
                if w <= 0.0 {
                    return Err(fields.out_of_range("w"));
                }
                let beta = fields.float("beta")?;
                if !(0.0..=1.0).contains(&beta) {
                    return Err(fields.out_of_range("beta"));
                }
                let flow = net
                    .flow_mut(flow_id)
                    .ok_or_else(|| perr(line, ParseErrorKind::UnknownFlow(flow_id.to_string())))?;
                if flow.hop_in(&cell).is_some() {
                    return Err(perr(
                        line,
                        ParseErrorKind::DuplicateCellInRoute {
                            flow: flow_id.to_string(),
                            cell,
                        },
                    ));
                }
                flow.route.push(HopSpec {
                    cell: cell.clone(),
                    phy_rate: w,
                    erasure_prob: beta,
                });
                hop_lines.push((line, cell));
            }
            other => {
                return Err(perr(
                    line,
                    ParseErrorKind::Syntax(format!("unknown directive {other:?}")),
                ))
            }
        }
    }

    for (line, cell) in hop_lines {
        if net.cell(&cell).is_none() {
            return Err(perr(line, ParseErrorKind::UnknownCell(cell)));
        }
    }
    if net.flows.is_empty() {
        return Err(perr(0, ParseErrorKind::NoFlows));
    }
    if let Some(f) = net.flows.iter().find(|f| f.route.is_empty()) {
        return Err(perr(0, ParseErrorKind::EmptyRoute(f.id.clone())));
    }
    Ok(net)
}
