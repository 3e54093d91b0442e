//! Standard, adversarial (AT) and weight-perturbed adversarial (AWP)
//! training from the same start, compared across attack budgets.

use semcom::harness::{prepare, run_epsilon_sweep, train_variants, ExperimentConfig};
use semcom::mae::Mae;

fn main() -> semcom::Result<()> {
    let cfg = ExperimentConfig::desk();
    let prep = prepare(&cfg)?;
    let trained = train_variants(&prep, &cfg, None)?;
    for t in &trained {
        let last = t.metrics.last().expect("at least one epoch");
        println!(
            "{:<16} train clean {:.3}  train adv {:.3}  mean |nu|/|theta| {:.4}",
            t.mode.as_str(),
            last.clean_acc,
            last.adv_acc,
            last.nu_ratio
        );
    }
    let variants: Vec<(&str, &Mae)> = trained.iter().map(|t| (t.mode.as_str(), &t.model)).collect();
    let report = run_epsilon_sweep(&variants, &prep.test, &cfg, &cfg.sweep.epsilons)?;
    println!("\n{:<16} {:>7} {:>7}", "variant", "eps", "acc");
    for r in &report.records {
        println!("{:<16} {:>7.3} {:>7.3}", r.variant, r.epsilon, r.adv_acc);
    }
    Ok(())
}
