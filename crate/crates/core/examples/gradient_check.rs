//! Checks reverse-mode gradients of a small MAE classifier against central
//! finite differences, for every weight tensor.

use semcom::channel::Transport;
use semcom::mae::{sample_mask, HeadKind, Mae, ModelConfig};
use semcom::model::{Batch, TaskModel};
use semcom::numerics::{grad_check_many, RngStream, StreamLabel, Tensor};

fn main() -> semcom::Result<()> {
    let cfg = ModelConfig {
        image_size: 8,
        patch_size: 4,
        embed_dim: 8,
        attention_heads: 2,
        decoder_hidden: 8,
        codebook_size: 0,
        ..ModelConfig::desk()
    };
    let model = Mae::new(cfg.clone(), HeadKind::Classification, 5)?;
    let mut rng = RngStream::new(5, StreamLabel::Data);
    let images: Vec<f64> = (0..3 * cfg.pixels()).map(|_| rng.uniform()).collect();
    let labels = [0usize, 3, 1];
    let mut mask_rng = RngStream::new(5, StreamLabel::Mask);
    let plans = (0..3)
        .map(|_| sample_mask(cfg.total_patches(), cfg.masking_ratio, &mut mask_rng))
        .collect::<semcom::Result<Vec<_>>>()?;

    let points: Vec<Tensor> = model.tensors().into_iter().cloned().collect();
    let report = grad_check_many(
        |g, vars| {
            let batch = Batch {
                images: &images,
                labels: &labels,
                plans: &plans,
            };
            let x = g.constant(vec![3, cfg.pixels()], images.clone())?;
            Ok(model.forward(g, vars, x, &batch, &mut Transport::Ideal)?.total_loss)
        },
        &points,
        1e-6,
        1e-4,
        Some(8),
    )?;
    println!(
        "{} coordinates over {} tensors, max relative error {:.2e}, passed {}",
        report.coordinates.len(),
        points.len(),
        report.max_rel_error,
        report.passed
    );
    Ok(())
}
