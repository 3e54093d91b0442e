use crate::error::{Error, Result};
use crate::numerics::graph::{Gradients, Graph, Var};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    /// Whether adversarial weight perturbation applies to this tensor.
    pub perturbable: bool,
}

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor, perturbable: bool) -> usize {
        self.params.push(Param {
            name: name.into(),
            tensor: tensor.with_grad(),
            perturbable,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param> {
        self.params.iter_mut()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().map(|p| &p.tensor)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.tensor)
    }

    pub fn truncate(&mut self, len: usize) {
        self.params.truncate(len);
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Inserts every tensor as a graph leaf, in order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.tensor(&p.tensor)).collect()
    }

    /// Inserts every tensor as a constant leaf (no gradient tracking).
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                g.leaf(p.tensor.shape().to_vec(), p.tensor.data().to_vec(), false)
                    .expect("parameter tensors are well formed")
            })
            .collect()
    }

    /// Stores the gradient of each bound leaf; untouched leaves get zeros.
    pub fn store_grads(&mut self, grads: &Gradients, vars: &[Var]) -> Result<()> {
        if vars.len() != self.params.len() {
            return Err(Error::contract(format!(
                "{} bound vars for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        for (p, &v) in self.params.iter_mut().zip(vars) {
            let g = grads.get_or_zeros(v, p.tensor.numel());
            p.tensor.set_grad(g)?;
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.clear_grad());
    }
}
