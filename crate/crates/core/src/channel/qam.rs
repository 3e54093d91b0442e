//! Gray-mapped 16-QAM with unit average symbol energy.
//!
//! Each symbol carries four bits `b0 b1 b2 b3`: `b0 b1` select the in-phase
//! level and `b2 b3` the quadrature level, both through the Gray map
//! `00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3`, scaled by `1/sqrt(10)`.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const BITS_PER_SYMBOL: usize = 4;
/// `1/sqrt(10)`: normalizes the 16 points to unit mean energy.
pub const NORM: f64 = 0.316_227_766_016_837_94;

fn gray_level(b0: bool, b1: bool) -> f64 {
    match (b0, b1) {
        (false, false) => -3.0,
        (false, true) => -1.0,
        (true, true) => 1.0,
        (true, false) => 3.0,
    }
}

/// Hard decision on one axis (already de-normalized): nearest of -3,-1,1,3.
fn level_bits(v: f64) -> (bool, bool) {
    if v < -2.0 {
        (false, false)
    } else if v < 0.0 {
        (false, true)
    } else if v < 2.0 {
        (true, true)
    } else {
        (true, false)
    }
}

pub fn map_symbol(bits: [bool; 4]) -> Complex64 {
    Complex64::new(gray_level(bits[0], bits[1]) * NORM, gray_level(bits[2], bits[3]) * NORM)
}

/// Minimum-distance decision for one (equalized) sample.
pub fn demap_symbol(y: Complex64) -> [bool; 4] {
    let (b0, b1) = level_bits(y.re / NORM);
    let (b2, b3) = level_bits(y.im / NORM);
    [b0, b1, b2, b3]
}

pub fn qam16_modulate(bits: &[bool]) -> Result<Vec<Complex64>> {
    if !bits.len().is_multiple_of(BITS_PER_SYMBOL) {
        return Err(Error::Framing(format!(
            "{} bits is not a multiple of {BITS_PER_SYMBOL}",
            bits.len()
        )));
    }
    Ok(bits
        .chunks(BITS_PER_SYMBOL)
        .map(|c| map_symbol([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn qam16_demodulate(symbols: &[Complex64]) -> Vec<bool> {
    symbols.iter().flat_map(|&y| demap_symbol(y)).collect()
}

/// The 16 constellation points indexed by their 4-bit label `b0 b1 b2 b3`
/// read as a big-endian integer.
pub fn constellation() -> [(u8, Complex64); 16] {
    std::array::from_fn(|label| {
        let bits = [label & 8 != 0, label & 4 != 0, label & 2 != 0, label & 1 != 0];
        (label as u8, map_symbol(bits))
    })
}

/// Symbol index (big-endian 4-bit label) of a 4-bit group.
pub fn symbol_label(bits: &[bool]) -> u8 {
    bits.iter().fold(0u8, |acc, &b| (acc << 1) | u8::from(b))
}
