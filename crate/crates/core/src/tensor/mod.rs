//! Dense tensors, reverse-mode differentiation and SGD.

mod dense;
pub(crate) mod kernels;
mod ops;
mod optim;
mod tape;

pub use dense::Tensor;
pub use optim::{cosine_lr, sgd_step, OptimizerState, Param};
pub use tape::{Backward, Tape, Var};
