//! The four CTR architectures and their building blocks.

mod config;
mod layers;
mod net;

pub use config::{Activation, Architecture, ModelConfig, ModelSettings};
pub use layers::{activate, cin_layer, field_pairs, fm_second_order, mlp, pairwise_inner_products, self_attention, AttentionOutput};
pub use net::{BatchInput, CtrNet, Init, ParamSpec};

use crate::features::FeatureError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("pairwise interactions need at least two categorical fields, schema has {0}")]
    TooFewFields(usize),
    #[error("parameters do not match the network: {0}")]
    ParamMismatch(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}
