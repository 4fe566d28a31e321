//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Tape`] records primitives as they execute; [`Tape::backward`] walks
//! it in reverse. Model parameters live in a [`ParameterSet`] and are bound
//! onto a tape per step; frozen parameters are bound as untracked leaves and
//! never receive gradient.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_training, relative_error, GradCheck};
pub use params::{group_of, normal_embedding, xavier_uniform, Binding, NameSelector, ParameterSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Dense, Real, Tensor, TensorError};
