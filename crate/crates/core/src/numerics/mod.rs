//! Dense tensors, a recorded autodiff graph, and a finite-difference oracle.

mod finite_diff;
mod graph;
mod tensor;

pub use finite_diff::{finite_diff, max_relative_error, relative_error};
pub use graph::{Axis, Graph, Var};
pub use tensor::Tensor;
