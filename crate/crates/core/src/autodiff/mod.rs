//! Reverse-mode differentiation over `f64` tensors.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckOptions, GradCheckReport, LossFn};
pub use tape::{log_softmax_row, softmax_row, Gradients, Tape, Var};
pub use tensor::Tensor;
