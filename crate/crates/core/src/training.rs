//! Standard, adversarial, and weight-perturbed adversarial training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::{attacked_inputs, AttackConfig};
use crate::channel::{ChannelConfig, Transport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mae::{HeadKind, Mae, MaskPlan};
use crate::model::{evaluate, param_gradients, store_gradients, Batch, TaskModel};
use crate::numerics::{Optimizer, OptimizerKind, RngStream, StreamLabel};

pub const DEFAULT_GAMMA: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Standard,
    Adversarial,
    WeightPerturbed,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Standard => "standard",
            TrainMode::Adversarial => "adversarial",
            TrainMode::WeightPerturbed => "weight_perturbed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(TrainMode::Standard),
            "adversarial" | "at" => Ok(TrainMode::Adversarial),
            "weight_perturbed" | "awp" => Ok(TrainMode::WeightPerturbed),
            other => Err(Error::config(format!("unknown training mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Attack used to build adversarial batches.
    pub attack: AttackConfig,
    /// Weight-perturbation budget, relative to each tensor's norm.
    pub gamma: f64,
    pub awp_enabled: bool,
    /// Train on clean and attacked copies of each batch together.
    #[serde(default)]
    pub mix_clean: bool,
    /// Leading epochs trained on clean inputs over the error-free link,
    /// whatever the mode and channel.
    #[serde(default)]
    pub warmup_epochs: usize,
    /// Channel the training forward passes go through; ideal when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelConfig>,
    pub seed: u64,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Sgd
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 0.05,
            optimizer: OptimizerKind::Sgd,
            attack: AttackConfig::default(),
            gamma: DEFAULT_GAMMA,
            awp_enabled: false,
            mix_clean: false,
            warmup_epochs: 0,
            channel: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if let Some(ch) = &self.channel {
            ch.validate()?;
        }
        self.attack.validate()
    }

    /// The mode implied by the flags: weight perturbation needs an attack.
    pub fn mode(&self) -> TrainMode {
        match (self.attack.is_active(), self.awp_enabled) {
            (false, _) => TrainMode::Standard,
            (true, false) => TrainMode::Adversarial,
            (true, true) => TrainMode::WeightPerturbed,
        }
    }

    /// Mode in effect during `epoch`.
    pub fn mode_at(&self, epoch: usize) -> TrainMode {
        if epoch < self.warmup_epochs {
            TrainMode::Standard
        } else {
            self.mode()
        }
    }

    pub fn with_mode(mut self, mode: TrainMode, attack: AttackConfig) -> Self {
        match mode {
            TrainMode::Standard => {
                self.attack = AttackConfig::none();
                self.awp_enabled = false;
            }
            TrainMode::Adversarial => {
                self.attack = attack;
                self.awp_enabled = false;
            }
            TrainMode::WeightPerturbed => {
                self.attack = attack;
                self.awp_enabled = true;
            }
        }
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub clean_loss: f64,
    pub adv_loss: f64,
    pub clean_acc: f64,
    pub adv_acc: f64,
    pub nu_ratio: f64,
}

/// Per-tensor weight perturbation, laid out like [`TaskModel::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct WeightPerturbation {
    pub nu: Vec<Vec<f64>>,
}

impl WeightPerturbation {
    /// `||nu|| / ||theta||` over the perturbable tensors.
    pub fn ratio<M: TaskModel>(&self, model: &M) -> f64 {
        let mut nu2 = 0.0;
        let mut th2 = 0.0;
        for ((nu, t), on) in self.nu.iter().zip(model.tensors()).zip(model.perturbable()) {
            if on {
                nu2 += nu.iter().map(|v| v * v).sum::<f64>();
                th2 += t.data().iter().map(|v| v * v).sum::<f64>();
            }
        }
        if th2 == 0.0 {
            0.0
        } else {
            (nu2 / th2).sqrt()
        }
    }

    /// A copy of `model` at `theta + nu`.
    pub fn apply<M: TaskModel>(&self, model: &M) -> M {
        let mut shifted = model.clone();
        for (t, nu) in shifted.tensors_mut().into_iter().zip(&self.nu) {
            t.data_mut().iter_mut().zip(nu).for_each(|(w, d)| *w += d);
        }
        shifted
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One ascent step on the weights: for every perturbable tensor,
/// `nu = gamma * |theta| * grad / |grad|`, zero when either norm is zero.
pub fn perturb_weights<M: TaskModel>(
    model: &M,
    input: &[f64],
    batch: &Batch,
    gamma: f64,
) -> Result<WeightPerturbation> {
    let tensors = model.tensors();
    if gamma == 0.0 {
        return Ok(WeightPerturbation {
            nu: tensors.iter().map(|t| vec![0.0; t.numel()]).collect(),
        });
    }
    let grads = param_gradients(model, input, batch, &mut Transport::Ideal)?.grads;
    let nu = grads
        .into_iter()
        .zip(&tensors)
        .zip(model.perturbable())
        .map(|((g, t), on)| {
            let (gn, tn) = (l2(&g), t.l2_norm());
            if !on || gn == 0.0 || tn == 0.0 {
                return vec![0.0; g.len()];
            }
            let s = gamma * tn / gn;
            g.iter().map(|v| v * s).collect()
        })
        .collect();
    Ok(WeightPerturbation { nu })
}

/// Draws one mask plan per sample for batch `key` of `epoch`.
pub fn batch_plans<M: TaskModel>(model: &M, seed: u64, key: u64, count: usize) -> Result<Vec<MaskPlan>> {
    let mut rng = RngStream::substream(seed, StreamLabel::Mask, key);
    (0..count).map(|_| model.sample_plan(&mut rng)).collect()
}

fn batch_key(epoch: usize, batch: usize) -> u64 {
    ((epoch as u64) << 32) | batch as u64
}

#[derive(Default)]
struct Tally {
    clean_loss: f64,
    adv_loss: f64,
    clean_correct: usize,
    adv_correct: usize,
    nu_ratio: f64,
    samples: usize,
    batches: usize,
}

/// One pass over `data` in `cfg.mode()`. Returns the epoch's metrics.
pub fn train_epoch<M: TaskModel>(
    model: &mut M,
    opt: &mut Optimizer,
    data: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochMetrics> {
    cfg.validate()?;
    if data.sample_len() != model.sample_len() {
        return Err(Error::contract(format!(
            "dataset samples of {} values for a model taking {}",
            data.sample_len(),
            model.sample_len()
        )));
    }
    let mode = cfg.mode_at(epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    RngStream::substream(cfg.seed, StreamLabel::Data, epoch as u64).shuffle(&mut order);
    let mut tally = Tally::default();
    for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
        let key = batch_key(epoch, b);
        let (images, labels) = data.gather(idx);
        let plans = batch_plans(model, cfg.seed, key, idx.len())?;
        let batch = Batch {
            images: &images,
            labels: &labels,
            plans: &plans,
        };
        let adv = match mode {
            TrainMode::Standard => None,
            _ => Some(attacked_inputs(model, &images, &batch, &cfg.attack)?),
        };
        let (mix_images, mix_labels, mix_plans, mix_input);
        let (train_batch, train_input) = match (&adv, cfg.mix_clean) {
            (Some(a), true) => {
                mix_images = [images.as_slice(), images.as_slice()].concat();
                mix_labels = [labels.as_slice(), labels.as_slice()].concat();
                mix_plans = [plans.as_slice(), plans.as_slice()].concat();
                mix_input = [images.as_slice(), a.as_slice()].concat();
                (
                    Batch {
                        images: &mix_images,
                        labels: &mix_labels,
                        plans: &mix_plans,
                    },
                    mix_input.as_slice(),
                )
            }
            (Some(a), false) => (batch, a.as_slice()),
            (None, _) => (batch, images.as_slice()),
        };

        let mut channel_rng = RngStream::substream(cfg.seed, StreamLabel::Channel, key);
        let link = cfg.channel.as_ref().filter(|_| epoch >= cfg.warmup_epochs);
        let mut transport = match link {
            Some(ch) => Transport::Link {
                cfg: ch,
                rng: &mut channel_rng,
            },
            None => Transport::Ideal,
        };

        let step = if mode == TrainMode::WeightPerturbed && cfg.gamma > 0.0 {
            let wp = perturb_weights(model, train_input, &train_batch, cfg.gamma)?;
            tally.nu_ratio += wp.ratio(model);
            let shifted = wp.apply(model);
            param_gradients(&shifted, train_input, &train_batch, &mut transport)?
        } else {
            param_gradients(model, train_input, &train_batch, &mut transport)?
        };

        let classifier = model.is_classifier();
        match &adv {
            None => {
                tally.clean_loss += step.evaluation.task_loss * idx.len() as f64;
                tally.adv_loss += step.evaluation.task_loss * idx.len() as f64;
                if classifier {
                    let c = step.evaluation.correct(&labels);
                    tally.clean_correct += c;
                    tally.adv_correct += c;
                }
            }
            Some(a) => {
                let clean = evaluate(model, &images, &batch, &mut Transport::Ideal)?;
                let attacked = evaluate(model, a, &batch, &mut Transport::Ideal)?;
                tally.clean_loss += clean.task_loss * idx.len() as f64;
                tally.adv_loss += attacked.task_loss * idx.len() as f64;
                if classifier {
                    tally.clean_correct += clean.correct(&labels);
                    tally.adv_correct += attacked.correct(&labels);
                }
            }
        }
        tally.samples += idx.len();
        tally.batches += 1;

        store_gradients(model, step.grads)?;
        opt.step(model.tensors_mut(), cfg.lr)?;
    }
    let n = tally.samples.max(1) as f64;
    let acc = |c: usize| if model.is_classifier() { c as f64 / n } else { f64::NAN };
    Ok(EpochMetrics {
        epoch,
        clean_loss: tally.clean_loss / n,
        adv_loss: tally.adv_loss / n,
        clean_acc: acc(tally.clean_correct),
        adv_acc: acc(tally.adv_correct),
        nu_ratio: if tally.batches == 0 {
            0.0
        } else {
            tally.nu_ratio / tally.batches as f64
        },
    })
}

/// Runs `cfg.epochs` epochs.
pub fn train<M: TaskModel>(model: &mut M, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochMetrics>> {
    let mut opt = Optimizer::new(cfg.optimizer);
    (0..cfg.epochs)
        .map(|e| train_epoch(model, &mut opt, data, cfg, e))
        .collect()
}

/// Replaces the head of a pretrained model and trains the whole network.
pub fn fine_tune(
    pretrained: &Mae,
    head: HeadKind,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Mae, Vec<EpochMetrics>)> {
    let mut model = pretrained.clone();
    model.swap_head(head, cfg.seed);
    let metrics = train(&mut model, data, cfg)?;
    Ok((model, metrics))
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for m in metrics {
        w.serialize(m).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::config(format!("{}: {other:?}", path.display())),
    }
}
