//! Dense tensors, activations, Adam, L2 penalties and finite-difference
//! gradient checking.
//!
//! Differentiation is explicit: every layer in this crate exposes a forward
//! function returning a cache and a backward function consuming it. There is
//! no tape. [`grad_check`] validates the hand-written backward passes.

mod activation;
mod gradcheck;
mod optim;
mod rng;
mod scalar;
mod tensor;

pub use activation::{softmax, softmax_backward, Activation};
pub use gradcheck::{grad_check, relative_error, GradCheckEntry, ParamSet};
pub use optim::{adam_step, adam_update, l2_penalty, l2_penalty_with_grad, AdamState, Param};
pub use rng::{xavier_uniform, Rng};
pub use scalar::Scalar;
pub use tensor::{
    axpy, bilinear, dot, matmul, matvec, matvec_t_acc, outer_acc, Tensor,
};
