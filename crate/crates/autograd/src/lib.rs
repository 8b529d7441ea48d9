//! Dense `f32` tensors with reverse-mode automatic differentiation.
//!
//! Every operation records a [`GradFn`] on its output when gradient tracking
//! is enabled and at least one input requires a gradient. Calling
//! [`Tensor::backward`] on a scalar walks the recorded graph in reverse
//! creation order and accumulates exact analytic gradients into every
//! reachable tensor that requires one.
//!
//! The spike nonlinearity ([`Tensor::heaviside`]) is the one non-smooth
//! operation: its forward pass is a hard threshold and its backward pass uses
//! a configurable [`Surrogate`] derivative.

mod error;
mod kernels;
mod ops;
mod shape;
mod surrogate;
mod tensor;

pub use error::{Error, Result};
pub use ops::conv::Conv2dParams;
pub use shape::{broadcast_shape, numel};
pub use surrogate::{Surrogate, SurrogateKind};
pub use tensor::{is_grad_enabled, no_grad, GradFn, NoGradGuard, Tensor};

/// Sentinel used in [`Tensor::gather`] index maps for positions that read zero.
pub const GATHER_ZERO: u32 = u32::MAX;
