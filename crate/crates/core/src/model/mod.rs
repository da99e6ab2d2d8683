//! The segmentation network: block specs, blocks, assembly and checkpoints.

mod blocks;
mod checkpoint;
mod hlb;
pub mod layers;
mod spec;

pub use blocks::{Bfb, Dsb, RESIDUAL_INIT_GAIN};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointPrecision, CHECKPOINT_MAGIC};
pub use hlb::{build_hlb, Model};
pub use layers::{NamedTensor, NamedTensorMut, TensorRole};
pub use spec::{
    BfbSpec, ConvSpec, DsbSpec, LayerSpec, ModelSpec, INPUT_CHANNELS, OUTPUT_STRIDE,
    STAGE1_BLOCKS, STAGE2_BLOCKS,
};
