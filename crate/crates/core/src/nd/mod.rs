//! Numeric substrate: tensors, reverse-mode differentiation, MLPs and Adam.

mod adam;
pub mod checkpoint;
mod gemm;
mod mlp;
mod tape;
mod tensor;

pub use adam::Adam;
pub use mlp::{sigmoid, Activation, Linear, Mlp, MlpForward};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
