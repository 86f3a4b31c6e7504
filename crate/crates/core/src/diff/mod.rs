//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! Every trainable quantity (meanshape vertices, network weights, texels) is
//! a leaf on a [`Tape`]. Operations append nodes; [`Tape::backward`] walks
//! them once in reverse creation order.

mod check;
mod ops;
mod tape;
mod tensor;

pub use check::{finite_difference_check, finite_difference_check_many, FdOptions};
pub use ops::concat;
pub(crate) use ops::sigmoid_f64;
pub use tape::{Backward, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for length {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: no operands")]
    Empty { op: &'static str },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("finite difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("non-finite value at input {input}, coordinate {coord}")]
    NonFinite { input: usize, coord: usize },
}
