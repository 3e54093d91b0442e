use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::channel::{ChannelConfig, ChannelFamily};
use crate::data::{load_cifar10_dir, synthetic, Dataset, PatternFamily, SyntheticSpec};
use crate::error::{Error, Result};
use crate::mae::ModelConfig;
use crate::numerics::OptimizerKind;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic,
    Cifar10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    /// Directory holding the CIFAR-10 binary batches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cifar10_dir: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub test_count: usize,
    /// Cap on the training split; everything left after the test split when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_count: Option<usize>,
    /// Set the model's input standardization from training-split pixel statistics.
    pub standardize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Test samples per evaluation batch.
    pub eval_batch: usize,
    /// Symbols per point of the link-level SER sweep.
    pub ser_symbols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds dataset generation, the split and model initialization.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    /// `train.channel` must stay unset; link-trained runs use `channel`.
    pub train: TrainConfig,
    /// Link used when training over the channel, and the family swept by the SNR sweep.
    pub channel: ChannelConfig,
    pub dataset: DatasetConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Low-contrast oriented stripes, small enough for a laptop CPU.
    pub fn desk() -> Self {
        let contrast = 0.005;
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            model: ModelConfig::desk(),
            train: TrainConfig {
                epochs: 12,
                warmup_epochs: 6,
                batch_size: 32,
                lr: 0.002,
                optimizer: OptimizerKind::Adam,
                attack: AttackConfig::default(),
                seed: 1,
                ..TrainConfig::default()
            },
            channel: ChannelConfig::new(ChannelFamily::Rayleigh, 0.0),
            dataset: DatasetConfig {
                source: DatasetSource::Synthetic,
                cifar10_dir: None,
                synthetic: SyntheticSpec {
                    family: PatternFamily::Stripes,
                    classes: 4,
                    per_class: 625,
                    image_size: 16,
                    channels: 1,
                    background: 0.5 - contrast / 2.0,
                    contrast,
                    noise: contrast / 4.0,
                },
                test_count: 500,
                train_count: None,
                standardize: true,
            },
            sweep: SweepConfig {
                snr_db: vec![-6.0, 0.0, 6.0, 12.0, 18.0],
                epsilons: vec![0.0, 0.004, 0.008, 0.012],
                eval_batch: 100,
                ser_symbols: 200_000,
            },
        }
    }

    /// Same experiment under another seed (data, split, init and training streams).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.channel.validate()?;
        if self.train.channel.is_some() {
            return Err(Error::config(
                "train.channel is managed by the harness; set [channel] instead",
            ));
        }
        if self.sweep.eval_batch == 0 {
            return Err(Error::config("sweep.eval_batch must be at least 1"));
        }
        if let Some(bad) = self.sweep.epsilons.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(Error::config(format!(
                "sweep epsilon must be finite and >= 0, got {bad}"
            )));
        }
        if let Some(bad) = self.sweep.snr_db.iter().find(|s| !s.is_finite()) {
            return Err(Error::config(format!("sweep snr_db must be finite, got {bad}")));
        }
        if self.dataset.test_count == 0 {
            return Err(Error::config("dataset.test_count must be at least 1"));
        }
        if self.dataset.source == DatasetSource::Cifar10 && self.dataset.cifar10_dir.is_none() {
            return Err(Error::config("dataset.source = \"cifar10\" needs dataset.cifar10_dir"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

/// Train and test splits plus the model config adjusted to them.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub model: ModelConfig,
}

pub fn load_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    match cfg.source {
        DatasetSource::Synthetic => synthetic(&cfg.synthetic, seed),
        DatasetSource::Cifar10 => {
            let dir = cfg
                .cifar10_dir
                .as_deref()
                .ok_or_else(|| Error::config("cifar10_dir is not set"))?;
            load_cifar10_dir(dir)
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let mut data = load_dataset(&cfg.dataset, cfg.seed)?;
    let m = &cfg.model;
    if data.height != m.image_size || data.channels != m.channels {
        data = data.resized(m.image_size, m.channels)?;
    }
    if data.num_classes > m.num_classes {
        return Err(Error::config(format!(
            "dataset has {} classes but the model predicts {}",
            data.num_classes, m.num_classes
        )));
    }
    let (mut train, test) = data.split(cfg.dataset.test_count, cfg.seed)?;
    if let Some(n) = cfg.dataset.train_count {
        if n < train.len() {
            let idx: Vec<usize> = (0..n).collect();
            train = train.subset(&idx);
        }
    }
    let mut model = m.clone();
    if cfg.dataset.standardize {
        let (mean, std) = train.pixel_stats();
        if !(std > 0.0) {
            return Err(Error::Data {
                offset: 0,
                detail: "training pixels have zero variance".into(),
            });
        }
        model.input_mean = mean;
        model.input_std = std;
    }
    model.validate()?;
    Ok(Prepared { train, test, model })
}
