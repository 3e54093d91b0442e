//! The codebook-free arm: encoder features cross the link as 8-bit codes,
//! costing D times more symbols than one index per patch.

use semcom::harness::{prepare, run_baseline_raw_features, run_snr_sweep, train_classifier, ExperimentConfig};
use semcom::training::TrainMode;

fn main() -> semcom::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.channel.snr_db = 6.0;
    let prep = prepare(&cfg)?;
    let coded = train_classifier(&prep, &cfg, TrainMode::Standard, Some(&cfg.channel))?.model;
    let mut raw_prep = prep.clone();
    raw_prep.model.codebook_size = 0;
    let raw = train_classifier(&raw_prep, &cfg, TrainMode::Standard, Some(&cfg.channel))?.model;

    let a = run_snr_sweep(&coded, &prep.test, &cfg, &cfg.sweep.snr_db)?;
    let b = run_baseline_raw_features(&raw, &prep.test, &cfg, &cfg.sweep.snr_db)?;
    println!("{:>6} {:>14} {:>14}", "snr_db", "codebook acc", "raw acc");
    for (x, y) in a.records.iter().zip(&b.records) {
        println!("{:>6} {:>14.3} {:>14.3}", x.snr_db, x.clean_acc, y.clean_acc);
    }
    println!(
        "symbols/image: codebook {}, raw features {}",
        a.records[0].symbols_per_image, b.records[0].symbols_per_image
    );
    Ok(())
}
