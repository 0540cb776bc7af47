//! Reverse-mode automatic differentiation over dense `f64` matrices.

mod adam;
mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use graph::{sigmoid, softplus, Graph, NodeId, Unary};
pub use params::{glorot_uniform, Gradients, ParamId, ParamSet};
pub use tensor::Tensor;
