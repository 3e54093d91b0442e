//! Dense tensors, reverse-mode differentiation, SGD and gradient checking.

pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::{sgd_step, Optimizer, OptimizerKind};
pub use params::{Param, ParamSet};
pub use rng::{RngStream, StreamLabel};
pub use tensor::Tensor;
