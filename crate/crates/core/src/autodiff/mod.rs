//! Dense float64 tensors and a tape-based reverse-mode differentiation engine.
//!
//! A [`Tape`] is built fresh for every forward pass. Operations append nodes
//! in evaluation order, so the append order is already a topological order and
//! [`Tape::backward`] simply walks it in reverse.
//!
//! Binary elementwise operations accept exactly one broadcast form: the right
//! operand may be a 1-D vector whose length equals the last dimension of the
//! left operand, in which case it is applied to every row.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params};
pub use params::{ParamId, ParamStore};
pub use tape::{sigmoid, BinaryKind, ElementwiseKind, Gradients, Tape, UnaryKind, Var, PROB_EPS};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("data of length {len} does not fit shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("id {id} out of range for table `{table}` with {rows} rows")]
    Index { id: usize, rows: usize, table: String },
    #[error("softmax row {row} has every position masked")]
    FullyMasked { row: usize },
    #[error("mask selects no elements")]
    EmptyMask,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter `{0}` already exists")]
    DuplicateParam(String),
}
