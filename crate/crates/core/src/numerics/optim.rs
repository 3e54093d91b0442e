use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// One plain SGD step `p <- p - lr * grad(p)` over every tensor; gradients
/// are cleared afterwards. Nothing is modified if any gradient is missing.
pub fn sgd_step<'a>(tensors: impl IntoIterator<Item = &'a mut Tensor>, lr: f64) -> Result<()> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::config(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    let mut tensors: Vec<&mut Tensor> = tensors.into_iter().collect();
    if let Some(i) = tensors.iter().position(|t| t.grad().is_none()) {
        return Err(Error::contract(format!("parameter tensor {i} has no gradient")));
    }
    for t in tensors.iter_mut() {
        let grad = t.take_grad().expect("checked above");
        if lr == 0.0 {
            continue;
        }
        for (w, g) in t.data_mut().iter_mut().zip(&grad) {
            *w -= lr * g;
        }
    }
    Ok(())
}

/// Which update rule a training run uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::config(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Stateful optimizer over a fixed list of tensors.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u32,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                t: 0,
                m: Vec::new(),
                v: Vec::new(),
            },
        }
    }

    /// Applies one update and clears the gradients.
    pub fn step<'a>(&mut self, tensors: impl IntoIterator<Item = &'a mut Tensor>, lr: f64) -> Result<()> {
        let Optimizer::Adam {
            beta1,
            beta2,
            eps,
            t,
            m,
            v,
        } = self
        else {
            return sgd_step(tensors, lr);
        };
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::config(format!(
                "learning rate must be finite and >= 0, got {lr}"
            )));
        }
        let mut tensors: Vec<&mut Tensor> = tensors.into_iter().collect();
        if let Some(i) = tensors.iter().position(|t| t.grad().is_none()) {
            return Err(Error::contract(format!("parameter tensor {i} has no gradient")));
        }
        if m.is_empty() {
            *m = tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
            *v = m.clone();
        }
        if m.len() != tensors.len() || m.iter().zip(&tensors).any(|(m, t)| m.len() != t.numel()) {
            return Err(Error::contract("optimizer state does not match the parameter layout"));
        }
        *t += 1;
        let c1 = 1.0 - beta1.powi(*t as i32);
        let c2 = 1.0 - beta2.powi(*t as i32);
        for ((tensor, m), v) in tensors.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
            let grad = tensor.take_grad().expect("checked above");
            if lr == 0.0 {
                continue;
            }
            for (((w, g), m), v) in tensor
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = *beta1 * *m + (1.0 - *beta1) * g;
                *v = *beta2 * *v + (1.0 - *beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + *eps);
            }
        }
        Ok(())
    }
}
