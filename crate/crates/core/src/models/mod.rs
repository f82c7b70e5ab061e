//! Network definitions as validated layer graphs, and their checkpoints.

mod arch;
mod checkpoint;
mod graph;

pub use arch::{
    build_model, csanet, dam_block, dam_forward, smallnet, unet, CsaNetConfig, ModelName, UNetConfig, DAM_REDUCTION,
    RAW_CHANNELS,
};
pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, Container, MAGIC, VERSION,
};
pub use graph::{GraphBuilder, Layer, LayerKind, ModelGraph, Src};
