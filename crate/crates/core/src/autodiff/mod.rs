//! Dense tensors, multilayer perceptrons with reverse-mode gradients, and Adam.

mod adam;
pub mod gradcheck;
mod mlp;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::finite_diff_check;
pub use mlp::{Activation, Gradients, Mlp, Tape};
pub use tensor::DenseTensor;
