//! Index and feature transport over the simulated physical link.

use crate::channel::bits::{deserialize_indices, serialize_indices, IndexFrame};
use crate::channel::fading::{apply_channel, equalize_demodulate, ChannelConfig};
use crate::channel::qam::{qam16_modulate, BITS_PER_SYMBOL};
use crate::error::Result;
use crate::numerics::RngStream;

/// serialize -> 16-QAM -> channel -> equalize/demodulate -> deserialize.
pub fn transmit_indices(frame: &IndexFrame, cfg: &ChannelConfig, rng: &mut RngStream) -> Result<IndexFrame> {
    let mut bits = serialize_indices(frame)?;
    let payload = bits.len();
    bits.resize(payload.div_ceil(BITS_PER_SYMBOL) * BITS_PER_SYMBOL, false);
    let received = transmit_bits(&bits, cfg, rng)?;
    deserialize_indices(&received[..payload], frame.codebook_size)
}

/// Raw bit transport; the length must be a multiple of four.
pub fn transmit_bits(bits: &[bool], cfg: &ChannelConfig, rng: &mut RngStream) -> Result<Vec<bool>> {
    let symbols = qam16_modulate(bits)?;
    let (y, h) = apply_channel(&symbols, cfg, rng);
    equalize_demodulate(&y, &h, cfg.sigma2(), rng)
}

/// Uniform 8-bit fixed-point code for real features clipped to `[-range, range]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureQuantizer {
    pub range: f64,
}

impl FeatureQuantizer {
    pub const BITS: usize = 8;

    pub fn encode(&self, v: f64) -> u8 {
        let t = ((v.clamp(-self.range, self.range) + self.range) / (2.0 * self.range)) * 255.0;
        t.round() as u8
    }

    pub fn decode(&self, code: u8) -> f64 {
        f64::from(code) / 255.0 * 2.0 * self.range - self.range
    }
}

impl Default for FeatureQuantizer {
    fn default() -> Self {
        Self { range: 4.0 }
    }
}

/// What sits between the transmitter's encoder and the receiver's decoder.
pub enum Transport<'a> {
    /// Error-free: the receiver sees exactly what was sent.
    Ideal,
    /// The simulated 16-QAM link.
    Link {
        cfg: &'a ChannelConfig,
        rng: &'a mut RngStream,
    },
}

impl Transport<'_> {
    pub fn is_ideal(&self) -> bool {
        matches!(self, Transport::Ideal)
    }

    pub fn carry_indices(&mut self, indices: &[usize], codebook_size: usize) -> Result<Vec<usize>> {
        match self {
            Transport::Ideal => Ok(indices.to_vec()),
            Transport::Link { cfg, rng } => {
                let frame = IndexFrame::new(indices.to_vec(), codebook_size)?;
                Ok(transmit_indices(&frame, cfg, rng)?.indices)
            }
        }
    }

    /// Real-valued features travel as 8-bit codes. The ideal transport
    /// passes them through untouched.
    pub fn carry_features(&mut self, features: &[f64], quantizer: FeatureQuantizer) -> Result<Vec<f64>> {
        match self {
            Transport::Ideal => Ok(features.to_vec()),
            Transport::Link { cfg, rng } => {
                let mut bits = Vec::with_capacity(features.len() * 8);
                for &v in features {
                    let code = quantizer.encode(v);
                    bits.extend((0..8).rev().map(|b| (code >> b) & 1 == 1));
                }
                let payload = bits.len();
                bits.resize(payload.div_ceil(BITS_PER_SYMBOL) * BITS_PER_SYMBOL, false);
                let received = transmit_bits(&bits, cfg, rng)?;
                Ok(received[..payload]
                    .chunks(8)
                    .map(|c| quantizer.decode(c.iter().fold(0u8, |acc, &b| (acc << 1) | u8::from(b))))
                    .collect())
            }
        }
    }
}
