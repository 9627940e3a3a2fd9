//! Dense tensors and reverse-mode differentiation.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, gradient_pair, relative_error, GradientPair};
pub use ops::{layer_norm_forward, sigmoid, softplus, softplus_inverse, Activation};
pub use tape::{BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;
