//! Closed-form symbol counts per image for the codebook scheme and for a
//! separate source/channel coding reference. No codec is run here.

use crate::error::{Error, Result};
use crate::mae::config::masked_count;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OverheadScheme {
    /// Codebook indices of the unmasked patches.
    MaeCodebook {
        patches: usize,
        mask_ratio: f64,
        bits_per_index: usize,
        bits_per_symbol: usize,
    },
    /// Raw 8-bit features of the unmasked patches.
    RawFeatures {
        patches: usize,
        mask_ratio: f64,
        feature_dim: usize,
        bits_per_value: usize,
        bits_per_symbol: usize,
    },
    /// Compressed image bytes protected by a rate `num/den` channel code.
    JpegLdpcReference {
        bytes: u64,
        code_rate_num: u64,
        code_rate_den: u64,
        bits_per_symbol: usize,
    },
}

impl OverheadScheme {
    pub fn name(&self) -> &'static str {
        match self {
            OverheadScheme::MaeCodebook { .. } => "mae_codebook",
            OverheadScheme::RawFeatures { .. } => "raw_features",
            OverheadScheme::JpegLdpcReference { .. } => "jpeg_ldpc_reference",
        }
    }

    /// 14x14 patches, half masked, 8-bit indices, 16-QAM.
    pub fn full_codebook() -> Self {
        OverheadScheme::MaeCodebook {
            patches: 196,
            mask_ratio: 0.5,
            bits_per_index: 8,
            bits_per_symbol: 4,
        }
    }

    /// 5108-byte images, rate-1/2 code, 16-QAM.
    pub fn jpeg_ldpc_reference() -> Self {
        OverheadScheme::JpegLdpcReference {
            bytes: 5108,
            code_rate_num: 1,
            code_rate_den: 2,
            bits_per_symbol: 4,
        }
    }
}

/// Number of channel symbols needed for one image (rounded up).
pub fn count_overhead(scheme: &OverheadScheme) -> Result<u64> {
    let symbols = |bits: u64, per_symbol: usize| -> Result<u64> {
        if per_symbol == 0 {
            return Err(Error::config("bits_per_symbol must be positive"));
        }
        Ok(bits.div_ceil(per_symbol as u64))
    };
    match *scheme {
        OverheadScheme::MaeCodebook {
            patches,
            mask_ratio,
            bits_per_index,
            bits_per_symbol,
        } => {
            let sent = (patches - masked_count(patches, mask_ratio)) as u64;
            symbols(sent * bits_per_index as u64, bits_per_symbol)
        }
        OverheadScheme::RawFeatures {
            patches,
            mask_ratio,
            feature_dim,
            bits_per_value,
            bits_per_symbol,
        } => {
            let sent = (patches - masked_count(patches, mask_ratio)) as u64;
            symbols(sent * (feature_dim * bits_per_value) as u64, bits_per_symbol)
        }
        OverheadScheme::JpegLdpcReference {
            bytes,
            code_rate_num,
            code_rate_den,
            bits_per_symbol,
        } => {
            if code_rate_num == 0 || code_rate_num > code_rate_den {
                return Err(Error::config(format!(
                    "code rate {code_rate_num}/{code_rate_den} outside (0, 1]"
                )));
            }
            let coded = (bytes * 8 * code_rate_den).div_ceil(code_rate_num);
            symbols(coded, bits_per_symbol)
        }
    }
}

/// `part / whole` as a percentage truncated to two decimals, e.g. `"0.95%"`.
pub fn ratio_percent(part: u64, whole: u64) -> String {
    let hundredths = part * 10_000 / whole;
    format!("{}.{:02}%", hundredths / 100, hundredths % 100)
}
