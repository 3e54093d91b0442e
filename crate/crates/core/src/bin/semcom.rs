use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semcom::attack::{AttackConfig, AttackKind};
use semcom::channel::{ser_sweep, ChannelConfig, ChannelFamily};
use semcom::harness::{self, ExperimentConfig, Prepared, Trained};
use semcom::mae::{checkpoint, Mae};
use semcom::training::{write_metrics_csv, TrainMode};
use semcom::Error;

#[derive(Parser)]
#[command(name = "semcom", version, about = "Robust semantic communication experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; the desk defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true, value_parser = parse_attack)]
    attack: Option<AttackKind>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Masked reconstruction pretraining.
    Pretrain,
    /// Classification fine-tuning of a pretrained checkpoint.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// standard, at or awp.
        #[arg(long, default_value = "standard", value_parser = parse_mode)]
        mode: TrainMode,
    },
    /// Clean and attacked accuracy of a classifier checkpoint.
    AttackEval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Accuracy against SNR (fig4_snr.csv) plus the link SER sweep.
    SweepSnr {
        /// Evaluate this checkpoint instead of training one over the link.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also train and sweep a model that sends raw 8-bit features.
        #[arg(long)]
        baseline: bool,
    },
    /// Standard, AT and AWP accuracy against attack budget (fig5_eps.csv).
    SweepEps,
    /// AWGN-trained model tested over AWGN, Rayleigh and Rician (fig6_channels.csv).
    SweepChannel {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Transmission overhead table (table1_overhead.csv).
    Overhead,
    /// Print the effective config as TOML.
    Config,
}

fn parse_attack(s: &str) -> Result<AttackKind, String> {
    AttackKind::parse(s).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    TrainMode::parse(s).map_err(|e| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data { .. } | Error::Load(_) | Error::Io { .. } | Error::Framing(_) => 3,
        Error::Numeric { .. } => 4,
        Error::Shape { .. } | Error::Contract(_) => 1,
    }
}

fn effective_config(c: &Common) -> semcom::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    if let Some(n) = c.epochs {
        cfg.train.epochs = n;
        cfg.train.warmup_epochs = cfg.train.warmup_epochs.min(n);
    }
    if c.attack.is_some() || c.eps.is_some() || c.steps.is_some() {
        let a = &cfg.train.attack;
        let eps = c.eps.unwrap_or(a.epsilon);
        let steps = c.steps.unwrap_or(a.steps);
        cfg.train.attack = match c.attack.unwrap_or(a.kind) {
            AttackKind::None => AttackConfig::none(),
            AttackKind::Fgsm => AttackConfig::fgsm(eps),
            AttackKind::Ifgsm => AttackConfig::ifgsm(eps, steps),
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> semcom::Result<&Path> {
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(dir)
}

fn save(t: &Trained, dir: &Path, stem: &str) -> semcom::Result<()> {
    checkpoint::save(&t.model, &dir.join(format!("{stem}.ckpt")))?;
    write_metrics_csv(&dir.join(format!("{stem}_metrics.csv")), &t.metrics)?;
    let last = t.metrics.last();
    println!(
        "{stem}: {} epochs, clean_acc {:.3}, adv_acc {:.3}",
        t.metrics.len(),
        last.map_or(f64::NAN, |m| m.clean_acc),
        last.map_or(f64::NAN, |m| m.adv_acc)
    );
    Ok(())
}

/// A checkpoint must match the prepared input statistics to be evaluated on this data.
fn load_for(path: &Path, prep: &Prepared) -> semcom::Result<Mae> {
    let m = checkpoint::load(path)?;
    if m.config().image_size != prep.model.image_size || m.config().channels != prep.model.channels {
        return Err(Error::Load(format!(
            "{} expects {}x{}x{} inputs",
            path.display(),
            m.config().image_size,
            m.config().image_size,
            m.config().channels
        )));
    }
    Ok(m)
}

fn report(r: &harness::EvalReport, dir: &Path) -> semcom::Result<()> {
    let path = harness::emit_report(r, dir)?;
    for x in &r.records {
        println!(
            "{:>12} {:>8} snr {:>6} eps {:.4} clean {:.3} adv {:.3}",
            x.variant, x.channel, x.snr_db, x.epsilon, x.clean_acc, x.adv_acc
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> semcom::Result<()> {
    let cfg = effective_config(&cli.common)?;
    match cli.cmd {
        Cmd::Config => {
            print!("{}", cfg.to_toml()?);
        }
        Cmd::Overhead => {
            let dir = out_dir(&cfg)?;
            for r in harness::overhead_rows(&cfg.model)? {
                println!("{:<20} {:>6} {}", r.scheme, r.symbols_per_image, r.ratio_to_reference);
            }
            println!("wrote {}", harness::emit_overhead(&cfg.model, dir)?.display());
        }
        Cmd::Pretrain => {
            let prep = harness::prepare(&cfg)?;
            let t = harness::pretrain(&prep, &cfg)?;
            save(&t, out_dir(&cfg)?, "pretrained")?;
        }
        Cmd::Finetune { checkpoint, mode } => {
            let prep = harness::prepare(&cfg)?;
            let dir = out_dir(&cfg)?;
            let path = checkpoint.unwrap_or_else(|| dir.join("pretrained.ckpt"));
            let pre = load_for(&path, &prep)?;
            let t = harness::finetune(&pre, &prep, &cfg, mode)?;
            save(&t, dir, &format!("finetuned_{}", mode.as_str()))?;
        }
        Cmd::AttackEval { checkpoint } => {
            let prep = harness::prepare(&cfg)?;
            let model = load_for(&checkpoint, &prep)?;
            let r = harness::attack_eval(&model, &prep.test, &cfg, &cfg.train.attack)?;
            println!(
                "attack {} eps {} steps {}: clean {:.3} adv {:.3}",
                cfg.train.attack.kind.as_str(),
                r.epsilon,
                cfg.train.attack.effective_steps(),
                r.clean_acc,
                r.adv_acc
            );
        }
        Cmd::SweepSnr { checkpoint, baseline } => {
            let prep = harness::prepare(&cfg)?;
            let dir = out_dir(&cfg)?;
            let snr = &cfg.sweep.snr_db;
            let model = match checkpoint {
                Some(p) => load_for(&p, &prep)?,
                None => {
                    let t = harness::train_classifier(&prep, &cfg, TrainMode::Adversarial, Some(&cfg.channel))?;
                    save(&t, dir, "snr_model")?;
                    t.model
                }
            };
            report(&harness::run_snr_sweep(&model, &prep.test, &cfg, snr)?, dir)?;
            let points = ser_sweep(
                cfg.channel.family,
                cfg.channel.rician_k,
                snr,
                cfg.sweep.ser_symbols,
                cfg.seed,
            )?;
            println!("wrote {}", harness::emit_ser(&points, dir)?.display());
            if baseline {
                let mut raw = prep.clone();
                raw.model.codebook_size = 0;
                let t = harness::train_classifier(&raw, &cfg, TrainMode::Adversarial, Some(&cfg.channel))?;
                save(&t, dir, "raw_model")?;
                report(
                    &harness::run_baseline_raw_features(&t.model, &prep.test, &cfg, snr)?,
                    dir,
                )?;
            }
        }
        Cmd::SweepEps => {
            let prep = harness::prepare(&cfg)?;
            let dir = out_dir(&cfg)?;
            let trained = harness::train_variants(&prep, &cfg, None)?;
            for t in &trained {
                save(t, dir, &format!("eps_{}", t.mode.as_str()))?;
            }
            let variants: Vec<(&str, &Mae)> = trained.iter().map(|t| (t.mode.as_str(), &t.model)).collect();
            report(
                &harness::run_epsilon_sweep(&variants, &prep.test, &cfg, &cfg.sweep.epsilons)?,
                dir,
            )?;
        }
        Cmd::SweepChannel { checkpoint } => {
            let prep = harness::prepare(&cfg)?;
            let dir = out_dir(&cfg)?;
            let model = match checkpoint {
                Some(p) => load_for(&p, &prep)?,
                None => {
                    let awgn = ChannelConfig {
                        family: ChannelFamily::Awgn,
                        ..cfg.channel.clone()
                    };
                    let t = harness::train_classifier(&prep, &cfg, TrainMode::Adversarial, Some(&awgn))?;
                    save(&t, dir, "awgn_model")?;
                    t.model
                }
            };
            report(
                &harness::run_channel_generalization(&model, &prep.test, &cfg, &cfg.sweep.snr_db)?,
                dir,
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
