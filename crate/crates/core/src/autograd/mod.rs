//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! All models in this crate (storyline scorer, story generator, story
//! evaluator, term predictor) are built on this tape so that their gradients
//! can be verified against finite differences.

mod adam;
mod graph;
pub mod gradcheck;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{log_sum_exp, sigmoid, softmax_in_place, Graph, Var};
pub use params::{Grads, ParamId, ParamStore};
pub use tensor::Tensor;
