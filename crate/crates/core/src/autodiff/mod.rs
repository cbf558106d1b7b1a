//! Define-by-run reverse-mode automatic differentiation over dense `f64`
//! tensors.
//!
//! Parameters live as [`Tensor`]s outside the tape. Every training step
//! records a fresh [`Tape`]: parameters enter as leaves, primitives are
//! methods on [`Var`], and [`Tape::backward`] walks the nodes in
//! decreasing id order, leaving gradients on the differentiable leaves.

pub mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, finite_difference_gradient, relative_error};
pub use tape::{OpKind, Tape, TapeNode, Var};
pub use tensor::Tensor;
