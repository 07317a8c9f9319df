//! Classifier definitions, parameter state and gradients.

pub mod checkpoint;
mod spec;
mod state;

pub use spec::{Layer, ModelSpec};
pub use state::{Evaluation, LayerGrads, ModelState};

use crate::error::Result;
use crate::tensor::Tensor;

pub fn init_params(spec: ModelSpec, seed: u64) -> Result<ModelState> {
    ModelState::init(spec, seed)
}

pub fn loss_and_grad(state: &ModelState, features: &Tensor, labels: &[usize]) -> Result<(f64, LayerGrads)> {
    state.loss_and_grad(features, labels)
}

pub fn per_example_grads(state: &ModelState, features: &Tensor, labels: &[usize]) -> Result<Vec<LayerGrads>> {
    state.per_example_grads(features, labels)
}

pub fn weight_distance(a: &ModelState, b: &ModelState) -> Result<f64> {
    a.distance(b)
}

pub fn apply_step(state: &ModelState, grads: &LayerGrads, lr: f64) -> Result<ModelState> {
    state.apply_step(grads, lr)
}
