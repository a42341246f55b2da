//! Multi-task towers with inter-task residual links, plus the NSE and ESMM
//! baselines and twin-tower variants.

mod config;
pub mod gradcheck;
mod network;
mod train;

pub use config::{
    chain_edges, Edge, LinkPreset, ModelConfig, ModelMode, Regularizer, TaskKind, TaskSpec, TowerLayout, TowerSpec,
};
pub use network::{
    ForwardGraph, HalfTrace, JointLoss, LinkActivations, LinkSite, MultiTaskModel, Phase, Predictions, TaskTrace,
};
pub use train::{LossRecord, TrainConfig};
