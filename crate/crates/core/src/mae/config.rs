use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Reconstruction,
    Classification,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Reconstruction => "reconstruction",
            HeadKind::Classification => "classification",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reconstruction" => Ok(HeadKind::Reconstruction),
            "classification" => Ok(HeadKind::Classification),
            other => Err(Error::config(format!("unknown head kind '{other}'"))),
        }
    }
}

/// Architecture of the masked autoencoder and its codebook.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub encoder_layers: usize,
    pub attention_heads: usize,
    pub mlp_ratio: usize,
    /// Width of the two hidden layers of the fully-connected decoder head.
    pub decoder_hidden: usize,
    pub num_classes: usize,
    pub masking_ratio: f64,
    /// Number of codebook vectors; 0 disables the codebook (raw features).
    pub codebook_size: usize,
    /// Commitment weight of the codebook loss.
    pub beta: f64,
    /// Pixels are standardized as `(x - input_mean) / input_std` before the
    /// patch embedding.
    #[serde(default)]
    pub input_mean: f64,
    #[serde(default = "unit")]
    pub input_std: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 16x16 grayscale, 4x4 patches, two 4-head encoder blocks of width 32.
    pub fn desk() -> Self {
        Self {
            image_size: 16,
            channels: 1,
            patch_size: 4,
            embed_dim: 32,
            encoder_layers: 2,
            attention_heads: 4,
            mlp_ratio: 2,
            decoder_hidden: 32,
            num_classes: 4,
            masking_ratio: 0.5,
            codebook_size: 256,
            beta: 0.25,
            input_mean: 0.0,
            input_std: 1.0,
        }
    }

    /// The full-size setting: 14x14 patch grid, 14 encoder layers, 12 heads.
    /// Constructible, but far too slow for a CPU test run.
    pub fn full_size() -> Self {
        Self {
            image_size: 28,
            channels: 3,
            patch_size: 2,
            embed_dim: 768,
            encoder_layers: 14,
            attention_heads: 12,
            mlp_ratio: 4,
            decoder_hidden: 512,
            num_classes: 10,
            masking_ratio: 0.5,
            codebook_size: 256,
            beta: 0.25,
            input_mean: 0.0,
            input_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("attention_heads", self.attention_heads),
            ("mlp_ratio", self.mlp_ratio),
            ("decoder_hidden", self.decoder_hidden),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("model.{name} must be positive")));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if !self.embed_dim.is_multiple_of(self.attention_heads) {
            return Err(Error::config(format!(
                "embed_dim {} is not divisible by attention_heads {}",
                self.embed_dim, self.attention_heads
            )));
        }
        if !(0.0..=1.0).contains(&self.masking_ratio) {
            return Err(Error::config(format!(
                "masking_ratio {} outside [0, 1]",
                self.masking_ratio
            )));
        }
        if self.codebook_size == 1 {
            return Err(Error::config("codebook_size must be 0 (disabled) or at least 2"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        if !(self.input_std > 0.0 && self.input_std.is_finite() && self.input_mean.is_finite()) {
            return Err(Error::config(format!(
                "input standardization needs finite mean and positive std, got {} / {}",
                self.input_mean, self.input_std
            )));
        }
        if self.unmasked_count() == 0 {
            return Err(Error::config("masking ratio leaves no patch for the encoder"));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn total_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size * self.channels
    }

    pub fn masked_count(&self) -> usize {
        masked_count(self.total_patches(), self.masking_ratio)
    }

    pub fn unmasked_count(&self) -> usize {
        self.total_patches() - self.masked_count()
    }

    pub fn uses_codebook(&self) -> bool {
        self.codebook_size >= 2
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.attention_heads
    }
}

pub fn masked_count(total: usize, ratio: f64) -> usize {
    ((ratio * total as f64).round() as usize).min(total)
}
