//! Differentiable compute substrate: tensors, recorded operations,
//! reverse-mode gradients, finite-difference checking and Adam.

mod adam;
mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use adam::{adam_step, Adam, AdamState};
pub use gradcheck::{
    analytic_gradients, compare_gradients, grad_check, numeric_gradients, GradCheckEntry,
    GradCheckReport, GradientSet,
};
pub use graph::{log_softmax, softmax, Gradients, Graph, Var};
pub use layers::{lstm_cell, Dense, LstmWeights, Mlp};
pub use params::{GradStore, Init, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

/// Epsilon used by every layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
