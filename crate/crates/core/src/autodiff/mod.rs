//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Persistent tensors live in a [`ParamStore`]. Each forward pass builds a
//! fresh [`Graph`] (the tape), registers the parameters it reads with
//! [`Graph::param`], and finishes with [`Graph::backward`], which adds the
//! loss gradient into every trainable leaf. Gradients accumulate until
//! [`ParamStore::zero_grad`] is called.

mod gradcheck;
mod graph;
mod param;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, CoordCheck, Coords, GradCheckReport};
pub use graph::{Binary, Graph, Reduce, Unary, Var};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
