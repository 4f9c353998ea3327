//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! The primitive set is deliberately small: add, mul, matmul, affine, tanh,
//! sigmoid, exp, log, softplus, sum/mean, logsumexp, constant mask products,
//! concatenation and gather (slice/select/broadcast). Everything else in the
//! crate is a composition of these, so certifying each adjoint against
//! finite differences certifies every model gradient.

mod check;
mod params;
mod tape;
mod tensor;

pub use check::{check_gradients, close, finite_difference_gradient, forward, numeric_jacobian, GradientReport};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Adjoints, Tape, Var};
pub use tensor::Tensor;

/// Alias matching the domain vocabulary: a tape is the record of a forward pass.
pub type ComputationRecord = Tape;
