//! The physical link: index framing, 16-QAM, fading channels with perfect
//! channel knowledge, and symbol accounting.

pub mod bits;
pub mod fading;
pub mod link;
pub mod overhead;
pub mod qam;
pub mod sweep;

pub use bits::{deserialize_indices, serialize_indices, IndexFrame};
pub use fading::{apply_channel, equalize_demodulate, ChannelConfig, ChannelFamily};
pub use link::{transmit_indices, FeatureQuantizer, Transport};
pub use overhead::{count_overhead, ratio_percent, OverheadScheme};
pub use qam::{qam16_demodulate, qam16_modulate};
pub use sweep::{ser_sweep, SerPoint};
