//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every primitive applied during a forward pass. The
//! solvers unroll their steps onto the tape, so [`Tape::backward`] returns
//! exact gradients of the discretized objective.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, value_and_grad, GradCheckReport};
pub use tape::{backward, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::logsumexp;
