//! Computation-graph automatic differentiation.
//!
//! [`Graph`] records primitives over dense `f64` arrays and runs a reverse
//! sweep for parameter gradients. [`Jet3`] propagates value plus first,
//! second and third directional derivatives through the same graph, so input
//! derivatives of a network stay differentiable with respect to its weights.

mod backward;
pub mod check;
mod error;
mod graph;
mod jet;
mod tensor;

pub use backward::Gradients;
pub use error::{AutodiffError, Result};
pub use graph::{Graph, NodeId, OpKind, Value};
pub use jet::{jet3_lift, jet3_primitive, Jet3};
pub use tensor::{Shape, Tensor};
