//! Dense numerical kernel: matrices, layers, reverse-mode gradients and Adam.

mod adam;
pub mod gradcheck;
mod layer;
mod matrix;
mod ops;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use layer::{dropout, dropout_mask, Activation, DenseLayer};
pub use matrix::Matrix;
pub use ops::{log_sigmoid, sigmoid, weighted_bce};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{GradientTape, Var, PROB_EPS};
