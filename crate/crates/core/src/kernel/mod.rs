//! Dense 2-D tensors and a small reverse-mode differentiation tape.
//!
//! Everything is `f64`: the models are tiny and gradient checks need the
//! headroom. Broadcasting is limited to adding a `1 × cols` row.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, relative_error, DEFAULT_FD_EPS, RELATIVE_ERROR_FLOOR};
pub use tape::{gelu, gelu_grad, softmax, CustomBackward, Gradients, Tape, Var, LAYER_NORM_EPS, MASK_VALUE};
pub use tensor::Tensor2;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("index {index} out of range in {op} (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
}
