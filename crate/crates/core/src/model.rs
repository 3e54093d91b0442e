//! The interface shared by everything that can be attacked and trained.

use crate::channel::Transport;
use crate::error::{Error, Result};
use crate::mae::MaskPlan;
use crate::numerics::{Graph, RngStream, Tensor, Var};

/// A minibatch. `images` holds the clean samples back to back; they are the
/// reconstruction targets even when the network is fed a perturbed copy.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub images: &'a [f64],
    pub labels: &'a [usize],
    pub plans: &'a [MaskPlan],
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub struct ForwardOutput {
    /// Logits `[batch, classes]` or reconstructed patches.
    pub output: Var,
    /// The task loss alone (what an attacker maximizes).
    pub task_loss: Var,
    /// Task loss plus any auxiliary training terms.
    pub total_loss: Var,
    /// Codebook indices chosen by the transmitter, if any.
    pub sent: Vec<usize>,
    /// Codebook indices seen by the receiver, if any.
    pub received: Vec<usize>,
}

pub trait TaskModel: Clone + Send + Sync {
    /// Number of input values per sample.
    fn sample_len(&self) -> usize;

    fn tensors(&self) -> Vec<&Tensor>;

    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    /// Per-tensor flag: does weight perturbation apply to it?
    fn perturbable(&self) -> Vec<bool>;

    /// Draws the mask plan for one sample.
    fn sample_plan(&self, _rng: &mut RngStream) -> Result<MaskPlan> {
        Ok(MaskPlan::none(1))
    }

    /// Whether outputs are class logits (so accuracy is meaningful).
    fn is_classifier(&self) -> bool {
        true
    }

    /// Builds the forward graph. `params` are the bound [`TaskModel::tensors`]
    /// in order and `input` holds the (possibly perturbed) batch inputs.
    fn forward(
        &self,
        g: &mut Graph,
        params: &[Var],
        input: Var,
        batch: &Batch,
        transport: &mut Transport,
    ) -> Result<ForwardOutput>;
}

pub fn bind<M: TaskModel>(g: &mut Graph, model: &M, trainable: bool) -> Vec<Var> {
    model
        .tensors()
        .into_iter()
        .map(|t| {
            g.leaf(t.shape().to_vec(), t.data().to_vec(), trainable)
                .expect("model tensors are well formed")
        })
        .collect()
}

fn input_leaf(g: &mut Graph, input: &[f64], batch: &Batch, sample_len: usize, requires_grad: bool) -> Result<Var> {
    if input.len() != batch.len() * sample_len || batch.images.len() != input.len() {
        return Err(Error::shape(
            "batch",
            format!(
                "{} inputs / {} clean values for {} samples of {sample_len}",
                input.len(),
                batch.images.len(),
                batch.len()
            ),
        ));
    }
    g.leaf(vec![batch.len(), sample_len], input.to_vec(), requires_grad)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub task_loss: f64,
    pub total_loss: f64,
    pub output: Vec<f64>,
    pub output_cols: usize,
    pub sent: Vec<usize>,
    pub received: Vec<usize>,
}

impl Evaluation {
    pub fn predictions(&self) -> Vec<usize> {
        argmax_rows(&self.output, self.output_cols)
    }

    pub fn correct(&self, labels: &[usize]) -> usize {
        self.predictions().iter().zip(labels).filter(|(p, l)| p == l).count()
    }

    pub fn index_errors(&self) -> usize {
        self.sent.iter().zip(&self.received).filter(|(a, b)| a != b).count()
    }
}

pub fn argmax_rows(values: &[f64], cols: usize) -> Vec<usize> {
    values
        .chunks(cols.max(1))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Forward pass only; no gradient bookkeeping.
pub fn evaluate<M: TaskModel>(
    model: &M,
    input: &[f64],
    batch: &Batch,
    transport: &mut Transport,
) -> Result<Evaluation> {
    let mut g = Graph::new();
    let params = bind(&mut g, model, false);
    let x = input_leaf(&mut g, input, batch, model.sample_len(), false)?;
    let out = model.forward(&mut g, &params, x, batch, transport)?;
    Ok(Evaluation {
        task_loss: g.scalar(out.task_loss),
        total_loss: g.scalar(out.total_loss),
        output_cols: *g.shape(out.output).last().unwrap_or(&1),
        output: g.value(out.output).to_vec(),
        sent: out.sent,
        received: out.received,
    })
}

/// Gradient of the mean task loss with respect to the inputs, parameters frozen.
pub fn input_gradient<M: TaskModel>(model: &M, input: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let params = bind(&mut g, model, false);
    let x = input_leaf(&mut g, input, batch, model.sample_len(), true)?;
    let out = model.forward(&mut g, &params, x, batch, &mut Transport::Ideal)?;
    let grads = g.backward(out.task_loss)?;
    Ok((g.scalar(out.task_loss), grads.get_or_zeros(x, input.len())))
}

/// Gradients of the total loss with respect to every model tensor.
pub struct ParamGradients {
    pub evaluation: Evaluation,
    pub grads: Vec<Vec<f64>>,
}

pub fn param_gradients<M: TaskModel>(
    model: &M,
    input: &[f64],
    batch: &Batch,
    transport: &mut Transport,
) -> Result<ParamGradients> {
    let mut g = Graph::new();
    let params = bind(&mut g, model, true);
    let x = input_leaf(&mut g, input, batch, model.sample_len(), false)?;
    let out = model.forward(&mut g, &params, x, batch, transport)?;
    let loss = g.scalar(out.total_loss);
    if !loss.is_finite() {
        return Err(Error::Numeric {
            coordinate: 0,
            detail: format!("training loss is {loss}"),
        });
    }
    let grads = g.backward(out.total_loss)?;
    let grads = params
        .iter()
        .zip(model.tensors())
        .map(|(&v, t)| grads.get_or_zeros(v, t.numel()))
        .collect();
    Ok(ParamGradients {
        evaluation: Evaluation {
            task_loss: g.scalar(out.task_loss),
            total_loss: loss,
            output_cols: *g.shape(out.output).last().unwrap_or(&1),
            output: g.value(out.output).to_vec(),
            sent: out.sent,
            received: out.received,
        },
        grads,
    })
}

/// Stores `grads` into the model tensors (ready for an optimizer step).
pub fn store_gradients<M: TaskModel>(model: &mut M, grads: Vec<Vec<f64>>) -> Result<()> {
    for (t, g) in model.tensors_mut().into_iter().zip(grads) {
        t.set_grad(g)?;
    }
    Ok(())
}
