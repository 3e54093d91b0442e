//! One model trained over AWGN, tested over AWGN, Rayleigh and Rician links.

use semcom::channel::{ChannelConfig, ChannelFamily};
use semcom::harness::{prepare, run_channel_generalization, train_classifier, ExperimentConfig};
use semcom::training::TrainMode;

fn main() -> semcom::Result<()> {
    let cfg = ExperimentConfig::desk();
    let prep = prepare(&cfg)?;
    let awgn = ChannelConfig::new(ChannelFamily::Awgn, 0.0);
    let model = train_classifier(&prep, &cfg, TrainMode::Adversarial, Some(&awgn))?.model;
    let report = run_channel_generalization(&model, &prep.test, &cfg, &cfg.sweep.snr_db)?;
    println!("{:<9} {:>6} {:>7} {:>10}", "channel", "snr_db", "clean", "index_err");
    for r in &report.records {
        println!(
            "{:<9} {:>6} {:>7.3} {:>10.4}",
            r.channel, r.snr_db, r.clean_acc, r.index_error_rate
        );
    }
    Ok(())
}
