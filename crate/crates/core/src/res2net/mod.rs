//! Res2Net blocks, the plain bottleneck they generalize, and the assembled
//! backbone that pools to the pedestrian descriptor.

mod backbone;
mod block;
mod bottleneck;

pub use backbone::{
    build_backbone, BackboneCache, BackboneConfig, Descriptor, Linear, Model, StageConfig,
    HEAD_INIT_STD,
};
pub use block::{BlockCache, BlockShape, Res2NetBlockParams};
pub use bottleneck::BottleneckParams;
