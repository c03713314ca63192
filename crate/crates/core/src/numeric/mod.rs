//! Dense tensors, a reverse-mode tape, finite-difference checks and
//! counter-based random streams.

mod gradcheck;
mod rng;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference, grad_check, objective, relative_error};
pub use rng::RngStream;
pub use scalar::Scalar;
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
