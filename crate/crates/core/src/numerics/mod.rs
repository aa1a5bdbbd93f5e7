//! Tensors, reverse-mode differentiation, Adam and seeded randomness.

mod adam;
mod graph;
mod rng;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, Graph, GraphNode, Var};
pub(crate) use graph::sigmoid;
pub use rng::{gaussian_sample, streams, Rng};
pub use tensor::Tensor;
