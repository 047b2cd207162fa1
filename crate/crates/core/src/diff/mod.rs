//! Reverse-mode automatic differentiation over dense arrays, plus Adam.
//!
//! The op set is exactly what the agents and the neural stack need. There is
//! no implicit broadcasting: bias rows go through [`Tape::add_row`], per-row
//! scaling through [`Tape::scale_rows`], and scalars through
//! [`Tape::add_scalar`] / [`Tape::scale`].

mod adam;
mod gradcheck;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_many, grad_check_per_input};
pub use params::{Binding, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
