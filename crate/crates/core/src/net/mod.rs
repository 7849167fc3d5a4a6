//! Minimal convolutional network engine with hookable layers.

mod activation;
mod checkpoint;
mod config;
mod engine;
mod init;
mod model;

pub use activation::{activate, activation_backward, sigmoid, silu, silu_grad, GradMode};
pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint,
    CheckpointManifest, EntryKind, TensorEntry, CHECKPOINT_MAGIC,
};
pub use config::{
    ActivationFamily, LayerKind, LayerSpec, ModelConfig, BLOCK_OUTPUTS, LAST_CONV_BLOCK,
};
pub use engine::{Backward, BatchGrads, HookPair, HookRecord, Tape, Trace};
pub use init::{randomize_model, Scheme};
pub use model::{build_model, Layer, Mode, Model, TrainingMeta, BN_EPS, BN_MOMENTUM};
