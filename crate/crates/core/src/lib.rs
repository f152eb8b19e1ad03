//! Deterministic simulator of hierarchical federated learning over vehicular
//! networks: traffic agents train a small classifier under a two-anchor
//! proximal objective, roadside units pre-aggregate over several local rounds
//! and a cloud aggregates globally, while a connectivity model drops agents.

pub mod data;
pub mod experiment;
pub mod federation;
pub mod heterogeneity;
pub mod metrics;
pub mod model;
pub mod seeds;
pub mod snapshot;

pub use data::{LabeledDataset, Partition, PartitionPlan, Scenario};
pub use federation::{Baseline, FrameworkParams};
pub use heterogeneity::{ConnectivityOracle, HeterogeneityConfig};
pub use metrics::{RoundRecord, RunSeries};
pub use model::{Anchors, Batch, ModelArchitecture, ParamVector, ProximalSpec, SgdOptions};
