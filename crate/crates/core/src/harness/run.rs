use rayon::prelude::*;

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Prepared};
use crate::mae::{HeadKind, Mae};
use crate::training::{fine_tune, train, EpochMetrics, TrainMode};

#[derive(Clone, Debug)]
pub struct Trained {
    pub mode: TrainMode,
    pub model: Mae,
    pub metrics: Vec<EpochMetrics>,
}

fn mode_config(cfg: &ExperimentConfig, mode: TrainMode, link: Option<&ChannelConfig>) -> crate::training::TrainConfig {
    let mut t = cfg.train.clone().with_mode(mode, cfg.train.attack.clone());
    t.channel = link.cloned();
    t
}

/// Trains a classifier from scratch. With `link`, every training forward
/// pass sends its indices through that channel.
pub fn train_classifier(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    mode: TrainMode,
    link: Option<&ChannelConfig>,
) -> Result<Trained> {
    let tc = mode_config(cfg, mode, link);
    if mode != TrainMode::Standard && !tc.attack.is_active() {
        return Err(Error::config(format!(
            "{} training needs an active attack",
            mode.as_str()
        )));
    }
    let mut model = Mae::new(prep.model.clone(), HeadKind::Classification, cfg.seed)?;
    let metrics = train(&mut model, &prep.train, &tc)?;
    Ok(Trained { mode, model, metrics })
}

/// Standard, adversarial and weight-perturbed classifiers, in that order.
pub fn train_variants(prep: &Prepared, cfg: &ExperimentConfig, link: Option<&ChannelConfig>) -> Result<Vec<Trained>> {
    [TrainMode::Standard, TrainMode::Adversarial, TrainMode::WeightPerturbed]
        .into_par_iter()
        .map(|mode| train_classifier(prep, cfg, mode, link))
        .collect()
}

/// Masked reconstruction pretraining on clean inputs over the error-free link.
pub fn pretrain(prep: &Prepared, cfg: &ExperimentConfig) -> Result<Trained> {
    let tc = mode_config(cfg, TrainMode::Standard, None);
    let mut model = Mae::new(prep.model.clone(), HeadKind::Reconstruction, cfg.seed)?;
    let metrics = train(&mut model, &prep.train, &tc)?;
    Ok(Trained {
        mode: TrainMode::Standard,
        model,
        metrics,
    })
}

/// Puts a classification head on `pretrained` and trains it in `mode`.
pub fn finetune(pretrained: &Mae, prep: &Prepared, cfg: &ExperimentConfig, mode: TrainMode) -> Result<Trained> {
    let tc = mode_config(cfg, mode, None);
    if mode != TrainMode::Standard && !tc.attack.is_active() {
        return Err(Error::config(format!(
            "{} training needs an active attack",
            mode.as_str()
        )));
    }
    let (model, metrics) = fine_tune(pretrained, HeadKind::Classification, &prep.train, &tc)?;
    Ok(Trained { mode, model, metrics })
}
