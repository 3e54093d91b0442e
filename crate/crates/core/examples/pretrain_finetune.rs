//! Masked reconstruction pretraining, then a classification head trained on
//! top of the pretrained encoder and codebook, next to the same head budget
//! trained from scratch. Uses the filled-shape family, where the masked
//! patches are predictable from the visible ones.

use semcom::data::SyntheticSpec;
use semcom::harness::{attack_eval, finetune, prepare, pretrain, train_classifier, ExperimentConfig};
use semcom::training::TrainMode;

fn main() -> semcom::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.dataset.synthetic = SyntheticSpec::default();
    cfg.train.epochs = 10;
    cfg.train.warmup_epochs = 10;
    let prep = prepare(&cfg)?;

    let pre = pretrain(&prep, &cfg)?;
    for m in &pre.metrics {
        println!("pretrain epoch {}  reconstruction mse {:.4}", m.epoch, m.clean_loss);
    }
    let tuned = finetune(&pre.model, &prep, &cfg, TrainMode::Standard)?;
    let scratch = train_classifier(&prep, &cfg, TrainMode::Standard, None)?;
    for (name, t) in [("fine-tuned", &tuned), ("from scratch", &scratch)] {
        let r = attack_eval(&t.model, &prep.test, &cfg, &cfg.train.attack)?;
        println!(
            "{name:<13} test clean {:.3}, eps {} attack {:.3}",
            r.clean_acc, r.epsilon, r.adv_acc
        );
    }
    Ok(())
}
