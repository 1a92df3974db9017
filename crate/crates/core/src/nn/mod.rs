//! Minimal CPU tensor, reverse-mode graph, and Adam optimizer backing the
//! generator and discriminator.

mod adam;
mod graph;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{BatchStats, Grads, Graph, Var};
pub(crate) use params::normal_tensor;
pub use params::{Bound, ParamStore};
pub use tensor::Tensor;
