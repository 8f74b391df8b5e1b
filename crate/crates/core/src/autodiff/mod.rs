//! Dense 2-D tensors with tape-based reverse-mode differentiation.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Axis, Gradients, Tape, Var, MASK_NEG};
pub use tensor::{Real, Tensor};
