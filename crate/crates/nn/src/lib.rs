//! A small reverse-mode automatic differentiation engine for convolutional
//! networks on dense `[batch, channel, height, width]` tensors.
//!
//! Ops are recorded on a [`Graph`]; [`Graph::backward`] returns gradients for
//! every node that depends on a parameter. Everything is generic over [`Real`]
//! so the same model code runs in `f32` for training and `f64` for gradient
//! checks.

mod graph;
pub mod kernels;
mod optim;
mod params;
mod real;
mod tensor;

pub use graph::{softplus, Gradients, Graph, Var};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
