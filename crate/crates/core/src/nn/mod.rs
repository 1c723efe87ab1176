//! Differentiable-computation engine: tensors, the layer set, MSE loss,
//! SGD with early stopping, and a finite-difference gradient checker.

mod graph;
mod tensor;
pub mod gradcheck;
pub mod train;

pub use graph::{Batch, ForwardPass, Gradients, Graph, GraphBuilder, Mode, NodeId};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error in '{layer}': {message}")]
    Shape { layer: String, message: String },
    #[error("graph construction error: {0}")]
    Build(String),
    #[error("missing input '{input}'")]
    MissingInput { input: String },
    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),
    #[error("state error: {0}")]
    State(String),
    #[error("training error: {0}")]
    Train(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}
