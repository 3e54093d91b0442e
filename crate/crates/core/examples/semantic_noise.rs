//! Iterative FGSM against a trained classifier: every perturbation stays in
//! the L2 ball, and accuracy falls as the budget grows.

use semcom::attack::{generate_semantic_noise, perturbation_norms, AttackConfig};
use semcom::channel::Transport;
use semcom::harness::{prepare, train_classifier, ExperimentConfig};
use semcom::model::{evaluate, Batch};
use semcom::training::{batch_plans, TrainMode};

fn main() -> semcom::Result<()> {
    let cfg = ExperimentConfig::desk();
    let prep = prepare(&cfg)?;
    let model = train_classifier(&prep, &cfg, TrainMode::Standard, None)?.model;

    let idx: Vec<usize> = (0..200).collect();
    let (images, labels) = prep.test.gather(&idx);
    let plans = batch_plans(&model, cfg.seed, u64::MAX, idx.len())?;
    let batch = Batch {
        images: &images,
        labels: &labels,
        plans: &plans,
    };
    let clean = evaluate(&model, &images, &batch, &mut Transport::Ideal)?.correct(&labels);
    println!("clean: {clean}/200");

    for eps in [0.004, 0.008, 0.012, 0.02] {
        for attack in [AttackConfig::fgsm(eps), AttackConfig::ifgsm(eps, 5)] {
            let delta = generate_semantic_noise(&model, &images, &batch, &attack)?;
            let norms = perturbation_norms(&delta, images.len() / idx.len());
            let adv: Vec<f64> = images.iter().zip(&delta).map(|(s, d)| s + d).collect();
            let worst = norms.iter().cloned().fold(0.0, f64::max);
            let acc = evaluate(&model, &adv, &batch, &mut Transport::Ideal)?.correct(&labels);
            println!(
                "{:<6} eps {eps:<6} max |ds| {worst:.5}  accuracy {acc}/200",
                attack.kind.as_str()
            );
        }
    }
    Ok(())
}
