//! Configuration, experiment presets, and result aggregation.

pub mod config;
pub mod experiments;

pub use config::{DataConfig, ModelConfig, ModelKind, RunConfig, TopologyConfig};
pub use experiments::{
    compare_ars, run, sweep_gamma, ArmOutcome, CompareResult, ExperimentSummary, SweepResult,
    OUT_ROOT_ENV,
};
