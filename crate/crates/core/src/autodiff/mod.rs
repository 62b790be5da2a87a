//! Reverse-mode automatic differentiation over dense row-major arrays.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles in
//! creation order, which is already a topological order. [`Tape::backward`]
//! walks the nodes once in reverse and returns [`Gradients`].
//!
//! Parameters live outside the tape in a [`ParamStore`]; every training
//! step binds them onto a fresh tape as leaves.

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod real;
mod tape;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_with};
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use real::Real;
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
