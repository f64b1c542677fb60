//! Minimal dense-tensor algebra with reverse-mode automatic differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass: graph observations change
//! size from step to step, so there is no static computation graph. Values are
//! row-major `f64` tensors of rank 0, 1 or 2.

mod adam;
mod error;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{AdamError, TensorError};
pub use params::{BoundParams, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
