//! Sparse generator, dense generator and conditional discriminators, plus
//! checkpoint persistence.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, OptimizerState,
    CHECKPOINT_VERSION,
};
pub use config::{NetworkConfig, NetworkKind};
pub use network::{
    build_dense_generator, build_discriminator, build_sparse_generator, ForwardPass, Mode, Network, BN_MOMENTUM,
};
