use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: input shapes {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Shape> },

    #[error("{op} expects {expected} inputs, got {got}")]
    Arity { op: &'static str, expected: usize, got: usize },

    #[error("value belongs to graph #{found}, used on graph #{expected}")]
    CrossGraph { expected: u64, found: u64 },

    #[error("numeric domain error in {op} producing node {node}: {detail}")]
    Domain { op: &'static str, node: usize, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got {}x{}", .0.0, .0.1)]
    NonScalarLoss(Shape),

    #[error("graph has no registered parameters")]
    NoParameters,

    #[error("NaN adjoint at node {node} ({op})")]
    NanAdjoint { node: usize, op: &'static str },

    #[error("{0} is not supported on jets")]
    UnsupportedJetOp(&'static str),

    #[error("jet direction {direction} out of range for input of length {len}")]
    DirectionOutOfRange { direction: usize, len: usize },
}
