//! Dense tensors, reverse-mode autodiff, Adam, and finite-difference checks.

mod adam;
mod gradcheck;
mod init;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradcheck, gradcheck_with};
pub use init::{uniform_fan_in, uniform_symmetric};
pub use tape::{Axis, Gradients, Mode, Tape, Var};
pub use tensor::{Scalar, Tensor};
