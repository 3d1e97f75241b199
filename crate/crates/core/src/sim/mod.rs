//! Monte Carlo harness: data-generating mechanism, scenario grid, per-replicate
//! analysis with all four methods, and performance measures.
//!
//! Every replicate draws from streams keyed by
//! `(base_seed, scenario index, replicate index, purpose)`, so tables are a pure
//! function of the configuration regardless of thread count.

pub mod config;
pub mod dgm;
pub mod grid;
pub mod metrics;
pub mod replicate;

use thiserror::Error;

pub use config::{Allocation, GridConfig, ScenarioConfig};
pub use grid::{metrics_from_estimates, run_grid, GridResult};
pub use metrics::{compute_metrics, EstimateRow, MethodMetrics};
pub use replicate::{run_replicate, Discard, ReplicateOutcome, ReplicateRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("need at least 2 usable records, got {0}")]
    TooFewRecords(usize),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}
