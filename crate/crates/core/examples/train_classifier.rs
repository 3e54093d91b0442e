//! Trains the desk-scale classifier end to end, saves a checkpoint and
//! reloads it bit for bit.

use semcom::harness::{prepare, train_classifier, ExperimentConfig};
use semcom::mae::checkpoint;
use semcom::training::TrainMode;

fn main() -> semcom::Result<()> {
    let cfg = ExperimentConfig::desk();
    let prep = prepare(&cfg)?;
    println!(
        "{} train / {} test images, input mean {:.4} std {:.5}",
        prep.train.len(),
        prep.test.len(),
        prep.model.input_mean,
        prep.model.input_std
    );
    let trained = train_classifier(&prep, &cfg, TrainMode::Standard, None)?;
    for m in &trained.metrics {
        println!("epoch {:>2}  loss {:.4}  acc {:.3}", m.epoch, m.clean_loss, m.clean_acc);
    }

    let dir = tempfile::tempdir().map_err(|e| semcom::Error::Io {
        path: "tempdir".into(),
        source: e,
    })?;
    let path = dir.path().join("classifier.ckpt");
    checkpoint::save(&trained.model, &path)?;
    let back = checkpoint::load(&path)?;
    println!(
        "checkpoint {} bytes, reload identical: {}",
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
        back == trained.model
    );
    Ok(())
}
