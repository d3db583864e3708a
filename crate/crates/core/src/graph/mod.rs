//! The detector computation graph.
//!
//! A cross-stage-partial backbone (stages at 64..1024 channels, each
//! optionally entered through a coordinate attention block), a pyramid-
//! pooling neck with configurable conv stacks, top-down and bottom-up path
//! aggregation, and three prediction heads at strides 8, 16 and 32.
//!
//! Structure lives in [`GraphPlan`] (cheap, weight-free: audits at full
//! width cost microseconds); [`Model`] adds the materialized parameter
//! store and the inference pass.

mod config;
mod model;
mod plan;
mod weights;

pub use config::{NetConfig, WidthMult};
pub use model::{build_model, HeadOutput, Model, NodeParams};
pub use plan::{plan_model, GraphPlan, LayerRow, Node, NodeId, NodeKind};
pub use weights::{
    load_weights, manifest_path, save_weights, WeightManifest, WEIGHT_MAGIC, WEIGHT_VERSION,
};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("weight file error: {0}")]
    WeightFile(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
