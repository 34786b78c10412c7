//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and, when gradients are being recorded, the parents needed to replay the
//! chain rule. Node indices are assigned in creation order, so the tape is
//! already topologically sorted and [`Graph::backward`] is a single reverse
//! sweep.

mod error;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod ops;
mod tensor;

pub use error::AdError;
pub use gradcheck::{finite_diff_check, GradCheck, GradCheckReport, GradCheckFailure};
pub use graph::{Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
