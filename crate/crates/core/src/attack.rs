//! Semantic noise: sign-gradient steps on the input with the cumulative
//! perturbation projected back onto an L2 ball.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{input_gradient, Batch, TaskModel};
use crate::numerics::graph::sign;

/// Power budget used when none is configured.
pub const DEFAULT_EPSILON: f64 = 0.012;
pub const DEFAULT_STEPS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Fgsm,
    Ifgsm,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Fgsm => "fgsm",
            AttackKind::Ifgsm => "ifgsm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttackKind::None),
            "fgsm" => Ok(AttackKind::Fgsm),
            "ifgsm" => Ok(AttackKind::Ifgsm),
            other => Err(Error::config(format!(
                "unknown attack '{other}' (expected none, fgsm or ifgsm)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L2 budget on each sample's perturbation, in [0, 1] pixel units.
    pub epsilon: f64,
    /// Norm order of the budget. Only 2 is supported.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Iterations for `ifgsm`; `fgsm` always takes one step.
    pub steps: usize,
    /// Per-step size; `epsilon / steps` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

fn default_p() -> f64 {
    2.0
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::ifgsm(DEFAULT_EPSILON, DEFAULT_STEPS)
    }
}

impl AttackConfig {
    pub fn none() -> Self {
        Self {
            kind: AttackKind::None,
            epsilon: 0.0,
            p: 2.0,
            steps: 1,
            alpha: None,
        }
    }

    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            epsilon,
            p: 2.0,
            steps: 1,
            alpha: None,
        }
    }

    pub fn ifgsm(epsilon: f64, steps: usize) -> Self {
        Self {
            kind: AttackKind::Ifgsm,
            epsilon,
            p: 2.0,
            steps,
            alpha: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(Error::config("attack steps must be at least 1"));
        }
        if self.p != 2.0 {
            return Err(Error::config(format!(
                "only the L2 budget is supported, got p = {}",
                self.p
            )));
        }
        if let Some(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::config(format!("alpha must be finite and >= 0, got {a}")));
            }
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.kind != AttackKind::None
    }

    pub fn effective_steps(&self) -> usize {
        match self.kind {
            AttackKind::None => 0,
            AttackKind::Fgsm => 1,
            AttackKind::Ifgsm => self.steps,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
            .unwrap_or_else(|| self.epsilon / self.effective_steps().max(1) as f64)
    }
}

/// `s + alpha * sign(grad)` with `sign(0) = +1`, where `grad` is the gradient
/// of the mean task loss over the batch.
pub fn fgsm_step<M: TaskModel>(model: &M, s: &[f64], batch: &Batch, alpha: f64) -> Result<Vec<f64>> {
    let (_, grad) = input_gradient(model, s, batch)?;
    if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            coordinate: i,
            detail: format!("input gradient is {}", grad[i]),
        });
    }
    Ok(s.iter().zip(&grad).map(|(x, g)| x + alpha * sign(*g)).collect())
}

/// Projection onto the `p`-norm ball of radius `epsilon`.
pub fn project(delta: &[f64], epsilon: f64, p: f64) -> Result<Vec<f64>> {
    if p != 2.0 {
        return Err(Error::config(format!("projection onto the L{p} ball is not supported")));
    }
    let norm = l2(delta);
    if norm <= epsilon {
        return Ok(delta.to_vec());
    }
    let scale = epsilon / norm;
    Ok(delta.iter().map(|d| d * scale).collect())
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-sample perturbations `s' - s` for the whole batch, flattened like
/// `s`. Each sample's perturbation is projected onto its own ball and the
/// attacked pixels are clamped to `[0, 1]`.
pub fn generate_semantic_noise<M: TaskModel>(
    model: &M,
    s: &[f64],
    batch: &Batch,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = model.sample_len();
    let mut current = s.to_vec();
    let alpha = cfg.alpha();
    for _ in 0..cfg.effective_steps() {
        let stepped = fgsm_step(model, &current, batch, alpha)?;
        for ((cur, step), orig) in current.chunks_mut(n).zip(stepped.chunks(n)).zip(s.chunks(n)) {
            let delta: Vec<f64> = step.iter().zip(orig).map(|(a, b)| a - b).collect();
            let delta = project(&delta, cfg.epsilon, cfg.p)?;
            for ((c, o), d) in cur.iter_mut().zip(orig).zip(delta) {
                *c = (o + d).clamp(0.0, 1.0);
            }
        }
    }
    Ok(current.iter().zip(s).map(|(a, b)| a - b).collect())
}

/// The attacked inputs `s + delta`, clamped as in [`generate_semantic_noise`].
pub fn attacked_inputs<M: TaskModel>(model: &M, s: &[f64], batch: &Batch, cfg: &AttackConfig) -> Result<Vec<f64>> {
    if !cfg.is_active() {
        cfg.validate()?;
        return Ok(s.to_vec());
    }
    let delta = generate_semantic_noise(model, s, batch, cfg)?;
    Ok(s.iter().zip(&delta).map(|(a, d)| a + d).collect())
}

/// L2 norm of every sample's perturbation.
pub fn perturbation_norms(delta: &[f64], sample_len: usize) -> Vec<f64> {
    delta.chunks(sample_len).map(l2).collect()
}
