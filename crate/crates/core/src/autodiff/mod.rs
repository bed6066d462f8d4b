//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Every operation is recorded on a [`Tape`] together with its value;
//! [`Tape::backward`] sweeps the tape in reverse and applies each
//! primitive's vector-Jacobian product. Tensors are generic over [`Real`]
//! so the same graph code runs in `f32` for training and `f64` for
//! gradient checking.

mod check;
mod tape;
mod tensor;

use thiserror::Error;

pub use check::{finite_difference_check, finite_difference_check_many, relative_error};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("loss must have a single element, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0}")]
    InvalidArgument(String),
}
