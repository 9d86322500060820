//! Tape-based reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Graph`] is rebuilt for every forward pass. Trainable tensors live in a
//! [`ParamStore`]; the graph reads them on demand and the backward sweep adds
//! their gradients into the store. Callers zero gradients between steps.

pub mod check;
mod graph;
mod tensor;

pub use graph::{log_sum_exp_slice, Broadcast, Elementwise, Graph, NodeId};
pub use tensor::{ParamId, ParamStore, Tensor};
