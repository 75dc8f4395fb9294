//! A compact reverse-mode automatic differentiation engine over dense `f64`
//! tensors.
//!
//! The engine is tape based: every operation appends a node to a [`Graph`]
//! and returns a [`Var`] handle. Calling [`Graph::backward`] walks the tape in
//! reverse and accumulates gradients. Nodes are created in topological order,
//! so no sort is needed.
//!
//! Trainable values live in a [`ParamStore`]. A graph attaches one or more
//! stores and marks each as trainable or frozen; frozen parameters enter the
//! graph as constants, so no gradient can reach them.

pub mod check;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Unary, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::{numel, strides, Tensor};
