//! Small numerical core: tensors, reverse-mode autodiff, layers, Adam,
//! checkpoints and a splittable RNG.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod rng;
pub mod tensor;

use thiserror::Error;

pub use graph::{Gradients, Graph, Var};
pub use params::{AdamConfig, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
