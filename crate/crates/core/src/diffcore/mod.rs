//! Small dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes. Calling
//! [`Graph::backward`] on a scalar node walks the tape once in reverse and
//! accumulates gradients into every node created with `requires_grad`.
//!
//! Only bias rows broadcast (see [`Graph::add_row`]); every other shape
//! disagreement is an error.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use graph::{Axis, Graph, Var};
pub use tensor::Tensor;
