use rayon::prelude::*;
use serde::Serialize;

use crate::attack::{attacked_inputs, AttackConfig, AttackKind};
use crate::channel::{count_overhead, ChannelConfig, ChannelFamily, OverheadScheme, Transport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::mae::{HeadKind, Mae, MaskPlan, ModelConfig};
use crate::model::{evaluate, Batch};
use crate::numerics::{RngStream, StreamLabel};
use crate::training::batch_plans;

/// Keys with the top bit set never collide with training batch keys.
const EVAL_KEY: u64 = 1 << 63;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    Snr,
    Epsilon,
    Channels,
    RawBaseline,
}

impl ReportKind {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportKind::Snr => "fig4_snr.csv",
            ReportKind::Epsilon => "fig5_eps.csv",
            ReportKind::Channels => "fig6_channels.csv",
            ReportKind::RawBaseline => "baseline_raw_snr.csv",
        }
    }
}

/// One sweep point. `snr_db` is infinite for the error-free link; the index
/// error rate is NaN for models that send raw features.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub variant: String,
    pub channel: String,
    pub snr_db: f64,
    pub epsilon: f64,
    pub clean_acc: f64,
    pub adv_acc: f64,
    pub index_error_rate: f64,
    pub symbols_per_image: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub kind: ReportKind,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            for acc in [r.clean_acc, r.adv_acc] {
                if !(0.0..=1.0).contains(&acc) {
                    return Err(Error::contract(format!("accuracy {acc} outside [0, 1] in {r:?}")));
                }
            }
        }
        Ok(())
    }
}

/// Symbols per image on a 16-QAM link for the model's transmission scheme.
pub fn symbols_per_image(cfg: &ModelConfig) -> Result<u64> {
    let patches = cfg.total_patches();
    let scheme = if cfg.uses_codebook() {
        OverheadScheme::MaeCodebook {
            patches,
            mask_ratio: cfg.masking_ratio,
            bits_per_index: crate::codebook::bits_per_index(cfg.codebook_size),
            bits_per_symbol: 4,
        }
    } else {
        OverheadScheme::RawFeatures {
            patches,
            mask_ratio: cfg.masking_ratio,
            feature_dim: cfg.embed_dim,
            bits_per_value: 8,
            bits_per_symbol: 4,
        }
    };
    count_overhead(&scheme)
}

/// A test set cut into batches with fixed masks, plus attacked copies.
pub struct EvalSet {
    batches: Vec<EvalBatch>,
}

struct EvalBatch {
    images: Vec<f64>,
    labels: Vec<usize>,
    plans: Vec<MaskPlan>,
    attacked: Vec<f64>,
}

impl EvalBatch {
    fn batch(&self) -> Batch<'_> {
        Batch {
            images: &self.images,
            labels: &self.labels,
            plans: &self.plans,
        }
    }
}

impl EvalSet {
    /// Masks depend on `seed` and the batch position only, so every model and
    /// sweep point sees the same masks.
    pub fn new(model: &Mae, test: &Dataset, batch_size: usize, seed: u64, attack: &AttackConfig) -> Result<Self> {
        if test.is_empty() {
            return Err(Error::config("empty test set"));
        }
        let order: Vec<usize> = (0..test.len()).collect();
        let batches = order
            .chunks(batch_size.max(1))
            .enumerate()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(b, idx)| {
                let (images, labels) = test.gather(idx);
                let plans = batch_plans(model, seed, EVAL_KEY | b as u64, idx.len())?;
                let attacked = {
                    let batch = Batch {
                        images: &images,
                        labels: &labels,
                        plans: &plans,
                    };
                    attacked_inputs(model, &images, &batch, attack)?
                };
                Ok(EvalBatch {
                    images,
                    labels,
                    plans,
                    attacked,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { batches })
    }

    pub fn len(&self) -> usize {
        self.batches.iter().map(|b| b.labels.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Clean and attacked accuracy through `link` (error-free when `None`).
    /// `point` selects the channel substream.
    pub fn score(&self, model: &Mae, link: Option<&ChannelConfig>, seed: u64, point: u64) -> Result<PointScore> {
        let mut s = PointScore::default();
        for (b, eb) in self.batches.iter().enumerate() {
            let batch = eb.batch();
            for (which, input) in [&eb.images, &eb.attacked].into_iter().enumerate() {
                let key = EVAL_KEY | point << 24 | (b as u64) << 1 | which as u64;
                let mut rng = RngStream::substream(seed, StreamLabel::Channel, key);
                let mut transport = match link {
                    Some(cfg) => Transport::Link { cfg, rng: &mut rng },
                    None => Transport::Ideal,
                };
                let ev = evaluate(model, input, &batch, &mut transport)?;
                let correct = ev.correct(&eb.labels);
                if which == 0 {
                    s.clean_correct += correct;
                    s.sent += ev.sent.len();
                    s.index_errors += ev.index_errors();
                } else {
                    s.adv_correct += correct;
                }
            }
            s.samples += eb.labels.len();
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PointScore {
    pub samples: usize,
    pub clean_correct: usize,
    pub adv_correct: usize,
    pub sent: usize,
    pub index_errors: usize,
}

impl PointScore {
    pub fn clean_acc(&self) -> f64 {
        self.clean_correct as f64 / self.samples.max(1) as f64
    }

    pub fn adv_acc(&self) -> f64 {
        self.adv_correct as f64 / self.samples.max(1) as f64
    }

    pub fn index_error_rate(&self) -> f64 {
        if self.sent == 0 {
            f64::NAN
        } else {
            self.index_errors as f64 / self.sent as f64
        }
    }
}

fn require_classifier(model: &Mae) -> Result<()> {
    if model.head() != HeadKind::Classification {
        return Err(Error::Load(format!(
            "sweeps need a classification checkpoint, got a {} head",
            model.head().as_str()
        )));
    }
    Ok(())
}

fn record(variant: &str, link: Option<&ChannelConfig>, epsilon: f64, s: &PointScore, symbols: u64) -> EvalRecord {
    EvalRecord {
        variant: variant.to_string(),
        channel: link.map_or("ideal", |c| c.family.as_str()).to_string(),
        snr_db: link.map_or(f64::INFINITY, |c| if c.noiseless { f64::INFINITY } else { c.snr_db }),
        epsilon,
        clean_acc: s.clean_acc(),
        adv_acc: s.adv_acc(),
        index_error_rate: s.index_error_rate(),
        symbols_per_image: symbols,
    }
}

/// Scores one model at each link setting in parallel; output order follows `links`.
fn sweep_links(
    model: &Mae,
    set: &EvalSet,
    links: &[ChannelConfig],
    seed: u64,
    variant: &str,
    epsilon: f64,
) -> Result<Vec<EvalRecord>> {
    let symbols = symbols_per_image(model.config())?;
    links
        .par_iter()
        .enumerate()
        .map(|(i, link)| {
            let s = set.score(model, Some(link), seed, i as u64)?;
            Ok(record(variant, Some(link), epsilon, &s, symbols))
        })
        .collect()
}

fn snr_links(base: &ChannelConfig, family: ChannelFamily, snr_list: &[f64]) -> Vec<ChannelConfig> {
    snr_list
        .iter()
        .map(|&snr_db| ChannelConfig {
            family,
            snr_db,
            noiseless: false,
            ..base.clone()
        })
        .collect()
}

/// Accuracy against SNR over `cfg.channel.family`, clean and under `cfg.train.attack`.
pub fn run_snr_sweep(model: &Mae, test: &Dataset, cfg: &ExperimentConfig, snr_list: &[f64]) -> Result<EvalReport> {
    require_classifier(model)?;
    let set = EvalSet::new(model, test, cfg.sweep.eval_batch, cfg.seed, &cfg.train.attack)?;
    let links = snr_links(&cfg.channel, cfg.channel.family, snr_list);
    let variant = if model.config().uses_codebook() {
        "mae_codebook"
    } else {
        "raw_features"
    };
    let records = sweep_links(model, &set, &links, cfg.seed, variant, cfg.train.attack.epsilon)?;
    Ok(EvalReport {
        kind: ReportKind::Snr,
        records,
    })
}

/// The same sweep for a model without a codebook: features cross the link as
/// 8-bit codes.
pub fn run_baseline_raw_features(
    model: &Mae,
    test: &Dataset,
    cfg: &ExperimentConfig,
    snr_list: &[f64],
) -> Result<EvalReport> {
    if model.config().uses_codebook() {
        return Err(Error::Load(
            "raw-feature baseline needs a checkpoint without a codebook".into(),
        ));
    }
    let mut report = run_snr_sweep(model, test, cfg, snr_list)?;
    report.kind = ReportKind::RawBaseline;
    Ok(report)
}

/// The attack swept over `eps_list` on the error-free link, for each named variant.
pub fn run_epsilon_sweep(
    variants: &[(&str, &Mae)],
    test: &Dataset,
    cfg: &ExperimentConfig,
    eps_list: &[f64],
) -> Result<EvalReport> {
    let base = match cfg.train.attack.kind {
        AttackKind::None => AttackConfig::default(),
        _ => cfg.train.attack.clone(),
    };
    let mut jobs = Vec::new();
    for (v, (name, model)) in variants.iter().enumerate() {
        require_classifier(model)?;
        for &eps in eps_list {
            jobs.push((v, *name, *model, eps));
        }
    }
    let records = jobs
        .into_par_iter()
        .map(|(_, name, model, epsilon)| {
            let attack = AttackConfig {
                epsilon,
                ..base.clone()
            };
            let set = EvalSet::new(model, test, cfg.sweep.eval_batch, cfg.seed, &attack)?;
            let s = set.score(model, None, cfg.seed, 0)?;
            Ok(record(name, None, epsilon, &s, symbols_per_image(model.config())?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        kind: ReportKind::Epsilon,
        records,
    })
}

/// One checkpoint tested over AWGN, Rayleigh and Rician links at each SNR.
pub fn run_channel_generalization(
    model: &Mae,
    test: &Dataset,
    cfg: &ExperimentConfig,
    snr_list: &[f64],
) -> Result<EvalReport> {
    require_classifier(model)?;
    let set = EvalSet::new(model, test, cfg.sweep.eval_batch, cfg.seed, &cfg.train.attack)?;
    let links: Vec<ChannelConfig> = [ChannelFamily::Awgn, ChannelFamily::Rayleigh, ChannelFamily::Rician]
        .into_iter()
        .flat_map(|f| snr_links(&cfg.channel, f, snr_list))
        .collect();
    let variant = if model.config().uses_codebook() {
        "mae_codebook"
    } else {
        "raw_features"
    };
    let records = sweep_links(model, &set, &links, cfg.seed, variant, cfg.train.attack.epsilon)?;
    Ok(EvalReport {
        kind: ReportKind::Channels,
        records,
    })
}

/// Clean and attacked accuracy of one model on the error-free link.
pub fn attack_eval(model: &Mae, test: &Dataset, cfg: &ExperimentConfig, attack: &AttackConfig) -> Result<EvalRecord> {
    require_classifier(model)?;
    attack.validate()?;
    let set = EvalSet::new(model, test, cfg.sweep.eval_batch, cfg.seed, attack)?;
    let s = set.score(model, None, cfg.seed, 0)?;
    let eps = if attack.is_active() { attack.epsilon } else { 0.0 };
    Ok(record("checkpoint", None, eps, &s, symbols_per_image(model.config())?))
}
