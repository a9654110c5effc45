//! Simulation designs, a replication-parallel Monte Carlo engine and CSV
//! tables of its summaries.

pub mod dgp;
pub mod monte_carlo;
pub mod tables;

pub use dgp::{draw_sample, true_tau, Dgp, DgpSpec};
pub use monte_carlo::{
    run_monte_carlo, run_replications, summarize, table_methods, McConfig, McSummary, MethodSpec, MethodSummary,
    RepOutcome,
};
pub use tables::{emit_tables, write_tables, TableError};
