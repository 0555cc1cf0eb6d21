//! Minimal dense-network engine: matrices, layers, losses, Adam.

pub mod adam;
pub mod layer;
pub mod loss;
pub mod matrix;

pub use adam::{adam_step, AdamState};
pub use layer::{dense_backward, dense_forward, Activation, DenseGrads, LayerParams};
pub use loss::{mse_loss, softmax, softmax_cross_entropy};
pub use matrix::DenseMatrix;
