//! Workload generators for the `erasurenum` benchmarks.

use erasurenum::{CellSpec, FlowSpec, HopSpec, NetworkSpec};

/// A line of `cells` cells crossed end to end by one long flow, plus one
/// single-hop flow per cell. Every hop has erasure `beta`.
pub fn parking_lot_chain(cells: usize, deadline: u32, beta: f64) -> NetworkSpec {
    assert!(cells > 0, "chain needs at least one cell");
    let ids: Vec<String> = (0..cells).map(|i| format!("c{i}")).collect();
    let hop = |cell: &str| HopSpec {
        cell: cell.to_string(),
        phy_rate: 1000.0,
        erasure_prob: beta,
    };
    let flow = |id: String, route: Vec<HopSpec>| FlowSpec {
        id,
        packet_symbols: 100,
        deadline_slots: deadline,
        route,
        rate_min: 0.15,
        rate_max: 0.5,
    };
    let mut flows = vec![flow("long".into(), ids.iter().map(|c| hop(c)).collect())];
    flows.extend(ids.iter().map(|c| flow(format!("short_{c}"), vec![hop(c)])));
    NetworkSpec {
        cells: ids.iter().map(|id| CellSpec { id: id.clone(), period: 1.0 }).collect(),
        flows,
    }
}
