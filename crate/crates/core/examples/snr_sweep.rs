//! Trains the adversarially hardened model over a 0 dB Rayleigh link and
//! tests it from -6 to 18 dB, clean and under attack.

use semcom::harness::{prepare, run_snr_sweep, train_classifier, ExperimentConfig};
use semcom::training::TrainMode;

fn main() -> semcom::Result<()> {
    let cfg = ExperimentConfig::desk();
    let prep = prepare(&cfg)?;
    println!(
        "training over {} at {} dB",
        cfg.channel.family.as_str(),
        cfg.channel.snr_db
    );
    let model = train_classifier(&prep, &cfg, TrainMode::Adversarial, Some(&cfg.channel))?.model;
    let report = run_snr_sweep(&model, &prep.test, &cfg, &cfg.sweep.snr_db)?;
    println!("{:>6} {:>7} {:>7} {:>10}", "snr_db", "clean", "adv", "index_err");
    for r in &report.records {
        println!(
            "{:>6} {:>7.3} {:>7.3} {:>10.4}",
            r.snr_db, r.clean_acc, r.adv_acc, r.index_error_rate
        );
    }
    Ok(())
}
