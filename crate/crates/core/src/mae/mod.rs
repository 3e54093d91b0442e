//! Masked autoencoder: patching, random masking, the transformer encoder and
//! the fully-connected decoder heads.

pub mod checkpoint;
pub mod config;
pub mod mask;
pub mod model;
pub mod patch;

pub use config::{HeadKind, ModelConfig};
pub use mask::{sample_mask, MaskPlan};
pub use model::Mae;
pub use patch::{patchify, unpatchify};
