//! Desk-scale learning: model, local training, FedAvg, data partitioning
//! and the decentralized (mixing-matrix) schedule.

mod data;
mod dfl;
mod model;
mod train;

pub use data::{
    load_csv_dataset, partition_dataset, split_holdout, DatasetPartition, Example, SyntheticBlobs,
};
pub use dfl::{mixing_step, run_dfl_schedule, DflOutcome, DflPlan, MixingMatrix};
pub use model::{ModelLayout, ModelParams, HEADER_BYTES, MAX_PARAMS};
pub use train::{
    client_update, evaluate, fedavg_aggregate, full_batch_gradient, loss_and_gradient, weighted_average,
    Evaluation, HyperParams,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LearningError {
    #[error("parameter layouts differ: {0}")]
    LayoutMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("aggregation needs at least one contribution")]
    EmptyAggregation,
    #[error("aggregation weight must be positive: {0}")]
    InvalidWeight(String),
    #[error("training diverged on drone {drone} in local epoch {epoch}")]
    Diverged { drone: usize, epoch: usize },
    #[error("invalid hyper-parameters: {0}")]
    InvalidHyperParams(String),
    #[error("data does not fit the model: {0}")]
    DataMismatch(String),
    #[error("dataset source is empty")]
    EmptySource,
    #[error("invalid partition request: {0}")]
    InvalidPartition(String),
    #[error("invalid mixing matrix: {0}")]
    InvalidMixingMatrix(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("cannot decode parameters: {0}")]
    Decode(String),
    #[error("cannot load dataset: {0}")]
    Load(String),
    #[error(transparent)]
    Energy(#[from] crate::energy::EnergyError),
}
