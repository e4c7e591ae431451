//! Network configuration, the per-patch building block and the full
//! patch-wise forward pass.

mod block;
mod config;
mod network;

pub use block::{
    block_forward, bottleneck_forward, dropout_mask, BlockScratch, BuildingBlock, InvertedResidualBottleneck, Mode,
    SiteKey,
};
pub use config::{NetworkConfig, Normalization, StageConfig, StageShape};
pub use network::{
    argmax, build_network, count_params, network_forward, stage_forward, top_k, Network, ParamCount, ParamKind,
    ParamMut, ParamRef, Stage,
};
