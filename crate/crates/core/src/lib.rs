//! Semantic communication over a noisy link with a shared discrete codebook,
//! plus the tooling to attack and harden it.

pub mod attack;
pub mod channel;
pub mod codebook;
pub mod data;
pub mod error;
pub mod harness;
pub mod mae;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
