//! Proportional-fair coding rates for unicast flows over multi-hop packet
//! erasure networks.
//!
//! Each flow spreads a packet's `n = k / r` coded symbols over `D` slots. The
//! decode-failure probability is bounded with a Chernoff bound whose spread
//! and parameter have closed-form optima, leaving one rate per flow. Rates are
//! coupled only through per-cell airtime limits, which [`num::solve`] prices
//! with a projected subgradient method on the dual.
//!
//! ```
//! use erasurenum::{instances, num::{solve, SolverConfig}};
//!
//! let report = solve(&instances::parking_lot(1e-3), &SolverConfig::default()).unwrap();
//! assert!(report.converged());
//! ```

pub mod error;
pub mod flow_solver;
pub mod instances;
pub mod kernel;
pub mod model;
pub mod num;
pub mod oracle;
pub mod sim;

pub use error::{Error, Result};
pub use flow_solver::{solve_flow_rate, Boundary, FlowProblem, FlowSolution, RootMethod};
pub use kernel::{
    chernoff_bound, error_at_optimum, kl_bernoulli, optimal_phi, optimal_theta, ChannelPoint, SpreadVector,
};
pub use model::{parse_network, CellSpec, Diagnostic, FlowSpec, HopSpec, NetworkSpec, ParseError};
pub use num::{PriceVector, SolveReport, SolverConfig, StepRule};
pub use oracle::{exact_error_probability, grid_search_joint};
pub use sim::{simulate_flow, simulate_hop_level, ErasureTrace, SimSummary};
