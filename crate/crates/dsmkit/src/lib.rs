//! Demand-side-management optimization for IoT-enabled microgrids.
//!
//! The crate schedules storage devices (batteries, EVs), interruptible and
//! non-interruptible appliances, and grid exchange over a discrete horizon
//! to minimize net operating cost. The MILP is solved by a bundled
//! deterministic solver (bounded-variable simplex plus branch-and-bound),
//! every solution is re-verified independently of the solver, and a
//! retrieval pipeline (chunking, hashed embeddings, exact top-k search,
//! context aggregation) ships alongside for knowledge-grounded tooling.
//!
//! Start from the runnable programs in `examples/`; the `dsmkit` binary
//! wraps the same entry points for batch use.

pub mod model;
pub mod retrieval;
pub mod scenario;
pub mod schedule;
pub mod solver;
pub mod timeseries;

pub mod cli;

pub use model::{build_misformulated_model, build_model, model_stats, MilpModel, ModelVariant};
pub use scenario::{load_scenario, parse_scenario, validate_scenario, Scenario};
pub use schedule::{compare, cost_of, extract_schedule, verify_schedule, Schedule};
pub use solver::{brute_force_milp, solve_lp, solve_milp, MilpSolution, SolveStatus, SolverOptions};
pub use timeseries::{Series, TimeGrid, Unit};
