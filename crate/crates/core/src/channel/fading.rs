use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::qam::demap_symbol;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelFamily {
    Awgn,
    Rayleigh,
    Rician,
}

impl ChannelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelFamily::Awgn => "awgn",
            ChannelFamily::Rayleigh => "rayleigh",
            ChannelFamily::Rician => "rician",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelFamily::Awgn),
            "rayleigh" => Ok(ChannelFamily::Rayleigh),
            "rician" => Ok(ChannelFamily::Rician),
            other => Err(Error::config(format!("unknown channel family '{other}'"))),
        }
    }
}

/// Scalar flat-fading link, independent fading per symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub family: ChannelFamily,
    pub snr_db: f64,
    /// Line-of-sight to scattered power ratio; used by the Rician family only.
    pub rician_k: f64,
    /// Noise-free link regardless of `snr_db`.
    #[serde(default)]
    pub noiseless: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            family: ChannelFamily::Awgn,
            snr_db: 0.0,
            rician_k: 4.0,
            noiseless: false,
        }
    }
}

impl ChannelConfig {
    pub fn new(family: ChannelFamily, snr_db: f64) -> Self {
        Self {
            family,
            snr_db,
            ..Self::default()
        }
    }

    pub fn noiseless(family: ChannelFamily) -> Self {
        Self {
            family,
            noiseless: true,
            ..Self::default()
        }
    }

    /// Antenna counts; only the single-antenna link is simulated.
    pub fn antennas(&self) -> (usize, usize) {
        (1, 1)
    }

    /// Noise variance for unit mean symbol energy: `1 / 10^(snr/10)`.
    pub fn sigma2(&self) -> f64 {
        if self.noiseless {
            0.0
        } else {
            1.0 / 10f64.powf(self.snr_db / 10.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() && !self.noiseless {
            return Err(Error::config(format!("snr_db must be finite, got {}", self.snr_db)));
        }
        if self.family == ChannelFamily::Rician && !(self.rician_k >= 0.0) {
            return Err(Error::config(format!("rician_k must be >= 0, got {}", self.rician_k)));
        }
        Ok(())
    }
}

/// Circularly-symmetric complex Gaussian with the given total variance.
pub fn complex_gaussian(rng: &mut RngStream, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    Complex64::new(s * rng.normal(), s * rng.normal())
}

/// One fading coefficient with unit mean power.
pub fn draw_fading(family: ChannelFamily, rician_k: f64, rng: &mut RngStream) -> Complex64 {
    match family {
        ChannelFamily::Awgn => Complex64::new(1.0, 0.0),
        ChannelFamily::Rayleigh => complex_gaussian(rng, 1.0),
        ChannelFamily::Rician => {
            let los = (rician_k / (rician_k + 1.0)).sqrt();
            Complex64::new(los, 0.0) + complex_gaussian(rng, 1.0 / (rician_k + 1.0))
        }
    }
}

/// `y = h x + n` per symbol. Returns the received samples and the fading
/// coefficients (perfect channel knowledge at the receiver).
pub fn apply_channel(
    symbols: &[Complex64],
    cfg: &ChannelConfig,
    rng: &mut RngStream,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let sigma2 = cfg.sigma2();
    let mut received = Vec::with_capacity(symbols.len());
    let mut fading = Vec::with_capacity(symbols.len());
    for &x in symbols {
        let h = draw_fading(cfg.family, cfg.rician_k, rng);
        let n = if sigma2 > 0.0 {
            complex_gaussian(rng, sigma2)
        } else {
            Complex64::new(0.0, 0.0)
        };
        received.push(h * x + n);
        fading.push(h);
    }
    (received, fading)
}

/// Zero-forcing equalization `y / h` followed by hard 16-QAM decisions.
/// A symbol whose fading coefficient is exactly zero is an erasure and its
/// four bits are drawn at random.
pub fn equalize_demodulate(
    received: &[Complex64],
    fading: &[Complex64],
    _sigma2: f64,
    rng: &mut RngStream,
) -> Result<Vec<bool>> {
    if received.len() != fading.len() {
        return Err(Error::contract(format!(
            "{} received samples with {} fading coefficients",
            received.len(),
            fading.len()
        )));
    }
    let mut bits = Vec::with_capacity(received.len() * 4);
    for (&y, &h) in received.iter().zip(fading) {
        if h.norm_sqr() == 0.0 {
            bits.extend((0..4).map(|_| rng.bit()));
        } else {
            bits.extend(demap_symbol(y / h));
        }
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::qam::{qam16_demodulate, qam16_modulate};
    use crate::numerics::StreamLabel;

    fn bits(n: usize) -> Vec<bool> {
        (0..n).map(|i| (i * 13 + i / 5) % 3 == 1).collect()
    }

    #[test]
    fn noiseless_awgn_is_identity() {
        let x = qam16_modulate(&bits(40)).unwrap();
        let cfg = ChannelConfig::noiseless(ChannelFamily::Awgn);
        let (y, h) = apply_channel(&x, &cfg, &mut RngStream::new(1, StreamLabel::Channel));
        assert_eq!(y, x);
        assert!(h.iter().all(|&h| h == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn noiseless_fading_recovers_bits() {
        let b = bits(400);
        let x = qam16_modulate(&b).unwrap();
        for fam in [ChannelFamily::Rayleigh, ChannelFamily::Rician] {
            let cfg = ChannelConfig::noiseless(fam);
            let mut rng = RngStream::new(2, StreamLabel::Channel);
            let (y, h) = apply_channel(&x, &cfg, &mut rng);
            assert_eq!(equalize_demodulate(&y, &h, 0.0, &mut rng).unwrap(), b);
        }
    }

    #[test]
    fn zero_fading_is_an_erasure_not_an_error() {
        let y = vec![Complex64::new(0.1, 0.2)];
        let h = vec![Complex64::new(0.0, 0.0)];
        let mut rng = RngStream::new(3, StreamLabel::Channel);
        assert_eq!(equalize_demodulate(&y, &h, 1.0, &mut rng).unwrap().len(), 4);
    }

    #[test]
    fn rician_large_k_is_nearly_unfaded() {
        let mut rng = RngStream::new(4, StreamLabel::Channel);
        for _ in 0..1000 {
            let h = draw_fading(ChannelFamily::Rician, 1e6, &mut rng);
            assert!((h - Complex64::new(1.0, 0.0)).norm() < 0.01);
        }
    }

    #[test]
    fn sigma2_follows_snr() {
        let cfg = ChannelConfig::new(ChannelFamily::Awgn, 10.0);
        assert!((cfg.sigma2() - 0.1).abs() < 1e-15);
        assert_eq!(ChannelConfig::new(ChannelFamily::Awgn, 0.0).sigma2(), 1.0);
        let _ = qam16_demodulate(&[]);
    }
}
