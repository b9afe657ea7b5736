//! Dense tensors, reverse-mode differentiation, the ReLU perceptron and Adam.

mod adam;
mod fd;
mod mlp;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fd::{finite_diff_grad, max_relative_error};
pub use mlp::{grad, init_mlp, init_with_widths, Dense, ModelParams, ParamVars, HIDDEN};
pub use tape::{argmax_row, softmax_rows, Gradients, Tape, Var};
pub use tensor::Tensor2;
