//! Experiment harness: configuration documents, cell execution, persistence
//! and analysis of regret curves.

pub mod analysis;
pub mod audit;
pub mod config;
pub mod experiment;

pub use analysis::{compare, fit_slope, read_summary, write_summary, Comparison, Metric, SlopeFit, SlopeOptions, SummaryRow};
pub use audit::{format_audit, spanner_audit, AuditRow};
pub use config::{
    ComparatorSpec, ControllerSpec, CostSpec, ExperimentConfig, InitSpec, OptimizerSpec, Plant, SystemSpec, OUTPUT_ROOT_ENV,
    SCHEMA_VERSION,
};
pub use experiment::{
    cell_csv, run_experiment, verify_cell, CellOutcome, CellRecord, Experiment, RunRecord, Verification, CELL_HEADER,
};
