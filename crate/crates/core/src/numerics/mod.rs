//! Dense tensors and a reverse-mode tape sized for the quality model.

mod tape;
mod tensor;

pub use tape::{Gradients, Graph, ParamStore, Var};
pub use tensor::{DType, Tensor};
