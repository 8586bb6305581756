//! Desk-scale simulator of decentralized SGD over sparse graphs with
//! heterogeneous data.
//!
//! Agents hold private data shards and a local model replica. Every round
//! each agent takes a local Nesterov-SGD step, exchanges parameters with its
//! graph neighbors, and applies gossip averaging scaled by an averaging rate
//! gamma. The averaging-rate scheduler grows gamma from a small initial
//! value toward 1 over training, which softens the damage neighbors' models
//! do early on when data is heavily non-IID.
//!
//! The crate is organized bottom-up: flat vector numerics, mixing-matrix
//! topologies, data generation and Dirichlet partitioning, closed-form
//! models, the local optimizer, the averaging-rate schedulers, the round
//! engine, and finally the experiment harness with its CSV outputs.

pub mod ars;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod optimizer;
pub mod rng;
pub mod topology;
pub mod trainer;

pub use ars::ScheduleSpec;
pub use data::{dirichlet_partition, epoch_batches, generate_blobs, load_csv, Dataset, Partition, Split};
pub use error::{Error, Result};
pub use harness::{CompareResult, ExperimentSummary, RunConfig, SweepResult};
pub use model::{Batch, ModelSpec};
pub use numerics::{mean_of, ParamVector};
pub use optimizer::{OptSettings, OptState};
pub use topology::{MixingMatrix, ValidationReport, Violation};
pub use trainer::{
    consensus_error, consensus_model, exchange, gossip_average, gossip_error, run_training,
    run_training_with, AgentState, Inbox, RoundMetrics, RunOutcome, RunPlan,
};
