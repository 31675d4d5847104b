//! Small reference networks used by tests, benchmarks and the CLI examples.

use crate::model::{CellSpec, FlowSpec, HopSpec, NetworkSpec};

fn cell(id: &str, period: f64) -> CellSpec {
    CellSpec {
        id: id.into(),
        period,
    }
}

fn flow(id: &str, deadline: u32, rate_min: f64, rate_max: f64, hops: &[&str], beta: f64) -> FlowSpec {
    FlowSpec {
        id: id.into(),
        packet_symbols: 100,
        deadline_slots: deadline,
        route: hops
            .iter()
            .map(|c| HopSpec {
                cell: (*c).into(),
                phy_rate: 1000.0,
                erasure_prob: beta,
            })
            .collect(),
        rate_min,
        rate_max,
    }
}

/// Two cells `a`, `b`; `f1` crosses `b`, `f2` crosses `a` then `b`, `f3` crosses `a`.
/// Every hop has erasure probability `beta`.
pub fn parking_lot(beta: f64) -> NetworkSpec {
    NetworkSpec {
        cells: vec![cell("a", 1.0), cell("b", 1.0)],
        flows: vec![
            flow("f1", 1, 0.15, 0.5, &["b"], beta),
            flow("f2", 1, 0.15, 0.5, &["a", "b"], beta),
            flow("f3", 1, 0.15, 0.5, &["a"], beta),
        ],
    }
}

/// [`parking_lot`] without `f3`: only cell `b` is shared.
pub fn two_cell_unequal(beta: f64) -> NetworkSpec {
    let mut net = parking_lot(beta);
    net.flows.retain(|f| f.id != "f3");
    net
}

/// One flow whose capacity constraint binds at rate 0.25.
pub fn single_tight() -> NetworkSpec {
    NetworkSpec {
        cells: vec![cell("a", 0.4)],
        flows: vec![flow("f", 3, 0.1, 0.9, &["a"], 0.05)],
    }
}

/// One flow with enough airtime to sit at its minimum rate.
pub fn single_ample() -> NetworkSpec {
    NetworkSpec {
        cells: vec![cell("a", 10.0)],
        flows: vec![flow("f", 3, 0.1, 0.9, &["a"], 0.05)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_validate() {
        for net in [parking_lot(0.1), parking_lot(1e-3), two_cell_unequal(1e-3), single_tight(), single_ample()] {
            assert!(net.validate().is_empty(), "{:?}", net.validate());
        }
    }

    #[test]
    fn text_round_trip() {
        let net = parking_lot(1e-3);
        assert_eq!(crate::model::parse_network(&net.to_text()).unwrap(), net);
    }
}
