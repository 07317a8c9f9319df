//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every backward rule is expressed with recorded primitives, so gradients
//! obtained with `create_graph = true` are ordinary graph nodes and can be
//! differentiated again (reverse-over-reverse). ReLU uses derivative 0 at 0.

mod graph;
mod kernels;

pub use graph::{Graph, Var};

use crate::tensor::Tensor;

/// Central-difference estimate of the gradient of `f` at `at`.
pub fn finite_difference(f: impl Fn(&Tensor) -> f64, at: &Tensor, step: f64) -> Tensor {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = at.clone();
    let mut out = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let hi = f(&probe);
        probe.data_mut()[i] = orig - step;
        let lo = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((hi - lo) / (2.0 * step));
    }
    Tensor::raw(at.shape().to_vec(), out)
}

/// Largest componentwise `|a - b| / max(|a|, |b|, 1e-5)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared vectors differ in length");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-5))
        .fold(0.0, f64::max)
}
