//! Monte Carlo symbol-error-rate sweeps of the bare 16-QAM link.

use rayon::prelude::*;

use crate::channel::bits::{deserialize_indices, IndexFrame};
use crate::channel::fading::{apply_channel, equalize_demodulate, ChannelConfig, ChannelFamily};
use crate::channel::qam::{qam16_modulate, symbol_label, BITS_PER_SYMBOL};
use crate::error::Result;
use crate::numerics::{RngStream, StreamLabel};

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SerPoint {
    pub snr_db: f64,
    pub symbols: u64,
    pub symbol_errors: u64,
    pub ser: f64,
    /// Fraction of 8-bit indices (two symbols each) received wrong.
    pub index_error_rate: f64,
}

/// Sends `symbols` uniformly random 16-QAM symbols at one SNR.
pub fn measure_ser(cfg: &ChannelConfig, symbols: usize, rng: &mut RngStream) -> Result<SerPoint> {
    let symbols = symbols - symbols % 2;
    const CHUNK: usize = 1 << 14;
    let mut errors = 0u64;
    let mut index_errors = 0u64;
    let mut done = 0;
    while done < symbols {
        let n = CHUNK.min(symbols - done);
        let bits: Vec<bool> = (0..n * BITS_PER_SYMBOL).map(|_| rng.bit()).collect();
        let x = qam16_modulate(&bits)?;
        let (y, h) = apply_channel(&x, cfg, rng);
        let rx = equalize_demodulate(&y, &h, cfg.sigma2(), rng)?;
        for (a, b) in bits.chunks(BITS_PER_SYMBOL).zip(rx.chunks(BITS_PER_SYMBOL)) {
            if symbol_label(a) != symbol_label(b) {
                errors += 1;
            }
        }
        let sent = deserialize_indices(&bits, 256)?;
        let got = deserialize_indices(&rx, 256)?;
        index_errors += sent.indices.iter().zip(&got.indices).filter(|(a, b)| a != b).count() as u64;
        done += n;
    }
    Ok(SerPoint {
        snr_db: cfg.snr_db,
        symbols: symbols as u64,
        symbol_errors: errors,
        ser: errors as f64 / symbols as f64,
        index_error_rate: index_errors as f64 / (symbols / 2) as f64,
    })
}

/// One point per SNR, each with its own random stream; output order matches
/// `snr_list`.
pub fn ser_sweep(
    family: ChannelFamily,
    rician_k: f64,
    snr_list: &[f64],
    symbols: usize,
    seed: u64,
) -> Result<Vec<SerPoint>> {
    snr_list
        .par_iter()
        .enumerate()
        .map(|(i, &snr)| {
            let cfg = ChannelConfig {
                family,
                snr_db: snr,
                rician_k,
                noiseless: false,
            };
            let mut rng = RngStream::substream(seed, StreamLabel::Channel, i as u64);
            measure_ser(&cfg, symbols, &mut rng)
        })
        .collect()
}

/// Index frame error count helper used by link-level reports.
pub fn index_errors(sent: &IndexFrame, received: &IndexFrame) -> usize {
    sent.indices
        .iter()
        .zip(&received.indices)
        .filter(|(a, b)| a != b)
        .count()
}
