//! Embedding + single-layer LSTM + one-hidden-layer ReLU MLP binary classifier
//! with hand-derived backpropagation and Adam.

mod adam;
pub mod gradcheck;
mod lstm;
mod params;
mod real;

pub use adam::{Adam, AdamConfig};
pub use lstm::{bce_loss, predict_label, ForwardCache};
pub use params::{Gradients, Layout, ModelConfig, ModelParams, ParamGroup};
pub use real::Real;
