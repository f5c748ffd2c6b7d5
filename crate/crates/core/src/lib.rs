//! Deterministic simulator of cluster-based decentralized federated learning
//! over a small UAV fleet.
//!
//! The crate is organised around the pieces a run is assembled from:
//!
//! * [`fleet`] places drones, splits them into clusters with k-means and
//!   elects a cluster head per cluster.
//! * [`learning`] holds the desk-scale model, local training, FedAvg, the
//!   dataset partitioner and the mixing-matrix (gossip) schedule.
//! * [`energy`] prices computation and radio transmissions and debits
//!   batteries.
//! * [`strategies`] runs the four training methods (commutative, alternate,
//!   one-server and local-only).
//! * [`metrics`] is the per-round logbook and the end-of-run summary.
//! * [`config`] and [`driver`] load experiment files and orchestrate runs
//!   and sweeps.

pub mod config;
pub mod driver;
pub mod energy;
pub mod fleet;
pub mod learning;
pub mod metrics;
pub mod seed;
pub mod strategies;

pub use config::ExperimentConfig;
pub use driver::{run_experiment, run_sweep, RunOutcome};
pub use fleet::{DroneState, Fleet, Position};
pub use learning::{DatasetPartition, ModelLayout, ModelParams};
pub use metrics::{RoundRecord, RunSummary};
pub use strategies::{Method, Simulation, TrainingPlan};
