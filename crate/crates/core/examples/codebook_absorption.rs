//! Nearest-vector quantization and its tolerance to small feature
//! perturbations: anything inside half the margin to the runner-up vector
//! maps to the same index.

use semcom::codebook::{quantize, Codebook};
use semcom::numerics::{RngStream, StreamLabel, Tensor};

fn main() -> semcom::Result<()> {
    let (j, d) = (16, 4);
    let mut rng = RngStream::new(3, StreamLabel::Init);
    let data: Vec<f64> = (0..j * d).map(|_| rng.normal()).collect();
    let cb = Codebook::new(Tensor::new(vec![j, d], data)?, 0.25)?;
    println!("{j} vectors of dimension {d}, {} bits per index", cb.bits_per_index());

    let z = vec![0.3, -0.2, 0.5, 0.1];
    let (index, z_b) = quantize(&z, &cb)?;
    let radius = cb.absorption_radius(&z);
    println!("z_e = {z:?} -> index {index}, z_b = {z_b:.3?}");
    println!("absorption radius {radius:.4}");

    let trials = 10_000;
    let (mut inside_changed, mut outside_changed) = (0, 0);
    for t in 0..trials {
        let dir: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if t % 2 == 0 { 0.99 * radius } else { 3.0 * radius };
        let moved: Vec<f64> = z.iter().zip(&dir).map(|(a, b)| a + b / norm * scale).collect();
        if cb.nearest(&moved) != index {
            if t % 2 == 0 {
                inside_changed += 1;
            } else {
                outside_changed += 1;
            }
        }
    }
    println!(
        "index changed: {inside_changed}/{} inside the radius, {outside_changed}/{} at 3x the radius",
        trials / 2,
        trials / 2
    );
    Ok(())
}
