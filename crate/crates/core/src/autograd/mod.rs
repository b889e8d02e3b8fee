//! Dense tensors with reverse-mode differentiation and the Adam optimizer.
//!
//! The op set is deliberately small: exactly what the waypoint network and
//! its two losses are built from.

mod adam;
pub mod conv;
mod gradcheck;
mod graph;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{compare_gradient, grad_check, grad_check_coords, relative_error, GradCheckReport};
pub use graph::{Activation, BinaryKind, Graph, ReduceKind, Var};
pub(crate) use graph::softplus;
pub use scalar::Scalar;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutogradError {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: {what} expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: {what} must have rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        what: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: kernel size {size} must be odd")]
    EvenKernel { op: &'static str, size: usize },
    #[error("{op}: unsupported stride {stride}")]
    Stride { op: &'static str, stride: usize },
    #[error("cannot broadcast {lhs:?} with {rhs:?}")]
    Broadcast { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("reduction needs at least one non-empty axis")]
    EmptyAxes,
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("cell ({row}, {col}) outside {h}x{w} map")]
    CellOutOfRange { row: usize, col: usize, h: usize, w: usize },
    #[error("row {row} has zero norm")]
    ZeroVector { row: usize },
    #[error("backward needs a single-element loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite gradient for parameter `{param}`")]
    NanGradient { param: String },
    #[error("optimizer state does not match parameter `{param}`")]
    StateMismatch { param: String },
}
