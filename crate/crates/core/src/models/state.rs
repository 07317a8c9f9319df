use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;

use super::spec::ModelSpec;
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Parameters of a [`ModelSpec`], ordered `[w0, b0, w1, b1, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    spec: Arc<ModelSpec>,
    params: Vec<Tensor>,
    /// Local update counter.
    pub step: u64,
    /// Communication round counter.
    pub round: u64,
}

/// Gradients laid out like the parameters of a [`ModelState`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    tensors: Vec<Tensor>,
}

impl LayerGrads {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(state: &ModelState) -> Self {
        Self {
            tensors: state.params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Canonical 2-D view of entry `i`: output-node rows by the flattened
    /// remaining dimensions (a bias vector becomes a single column).
    pub fn view_2d(&self, i: usize) -> (usize, usize) {
        view_2d(self.tensors[i].shape())
    }

    /// Norm over every entry, flattened together.
    pub fn norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            tensors: self.tensors.iter().map(|t| t.scale(c)).collect(),
        }
    }

    /// Elementwise `self / d`.
    pub fn scale_div(mut self, d: f64) -> Self {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v /= d;
            }
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn congruent(&self, other: &LayerGrads) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub(crate) fn check_congruent(&self, other: &LayerGrads) -> Result<()> {
        if !self.congruent(other) {
            return Err(Error::Layout("gradient layouts differ".into()));
        }
        Ok(())
    }

    /// In-place `self += other`.
    pub fn accumulate(&mut self, other: &LayerGrads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    /// Sum in list order, then divide by `divisor`.
    pub fn mean_of(list: &[LayerGrads], divisor: f64) -> Result<LayerGrads> {
        let first = list.first().ok_or(Error::EmptyBatch)?;
        let mut acc = first.clone();
        for g in &list[1..] {
            acc.check_congruent(g)?;
            acc.accumulate(g);
        }
        Ok(acc.scale_div(divisor))
    }
}

pub(crate) fn view_2d(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, 1),
        [n, rest @ ..] => (*n, rest.iter().product()),
    }
}

impl ModelState {
    /// He-uniform weights (`U(-b, b)`, `b = sqrt(6 / fan_in)`) and zero
    /// biases, deterministic in `seed`.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng::stream(seed, &[rng::tag::INIT]);
        let mut params = Vec::new();
        for layer in &spec.layers {
            let Some((ws, bs)) = layer.param_shapes() else { continue };
            let bound = (6.0 / layer.fan_in() as f64).sqrt();
            let n: usize = ws.iter().product();
            let w = (0..n).map(|_| r.random_range(-bound..bound)).collect();
            params.push(Tensor::raw(ws, w));
            params.push(Tensor::zeros(&bs));
        }
        Ok(Self {
            spec: Arc::new(spec),
            params,
            step: 0,
            round: 0,
        })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_shapes();
        if expected.len() != params.len()
            || expected.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape())
        {
            return Err(Error::Layout("parameters do not match the model spec".into()));
        }
        if !params.iter().all(Tensor::is_finite) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self {
            spec: Arc::new(spec),
            params,
            step: 0,
            round: 0,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`ModelState::flatten`], keeping this state's layout and
    /// counters.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::Layout(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        let params = self
            .params
            .iter()
            .map(|p| {
                let t = Tensor::raw(p.shape().to_vec(), flat[off..off + p.len()].to_vec());
                off += p.len();
                t
            })
            .collect();
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    pub fn congruent(&self, other: &ModelState) -> bool {
        self.spec == other.spec
    }

    /// Euclidean distance between the flattened parameter vectors.
    pub fn distance(&self, other: &ModelState) -> Result<f64> {
        if !self.congruent(other) {
            return Err(Error::Layout("models have different architectures".into()));
        }
        let sq: f64 = self
            .params
            .iter()
            .zip(&other.params)
            .flat_map(|(a, b)| a.data().iter().zip(b.data()))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(sq.sqrt())
    }

    /// `w - lr * g`, with the step counter advanced.
    pub fn apply_step(&self, grads: &LayerGrads, lr: f64) -> Result<Self> {
        if grads.len() != self.params.len()
            || grads
                .tensors
                .iter()
                .zip(&self.params)
                .any(|(g, p)| g.shape() != p.shape())
        {
            return Err(Error::Layout("gradient does not match parameters".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient step".into()));
        }
        let params = self
            .params
            .iter()
            .zip(&grads.tensors)
            .map(|(p, g)| p.zip_map(g, |w, d| w - lr * d))
            .collect();
        Ok(Self {
            spec: self.spec.clone(),
            params,
            step: self.step + 1,
            round: self.round,
        })
    }

    /// Weighted parameter average. Weights must sum to one.
    pub fn weighted_average(states: &[(&ModelState, f64)]) -> Result<Self> {
        let (first, _) = states.first().ok_or(Error::EmptyBatch)?;
        let mut params: Vec<Tensor> = first.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        for (s, w) in states {
            if !first.congruent(s) {
                return Err(Error::Layout("models have different architectures".into()));
            }
            for (acc, p) in params.iter_mut().zip(&s.params) {
                for (a, v) in acc.data_mut().iter_mut().zip(p.data()) {
                    *a += w * v;
                }
            }
        }
        Ok(Self {
            params,
            ..(*first).clone()
        })
    }

    fn check_batch(&self, features: &Tensor, labels: &[usize]) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let expect: Vec<usize> = std::iter::once(labels.len())
            .chain(self.spec.input_shape.iter().copied())
            .collect();
        if features.shape() != expect.as_slice() {
            return Err(Error::Layout(format!(
                "batch shape {:?}, model expects {:?}",
                features.shape(),
                expect
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.spec.classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.spec.classes,
            });
        }
        Ok(())
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(&self, features: &Tensor, labels: &[usize]) -> Result<(f64, LayerGrads)> {
        self.check_batch(features, labels)?;
        let mut g = Graph::new();
        let params: Vec<_> = self.params.iter().map(|p| g.leaf(p.clone())).collect();
        let x = g.constant(features.clone());
        let logits = self.spec.forward(&mut g, &params, x)?;
        let loss = g.softmax_cross_entropy(logits, labels.into())?;
        let value = g.value(loss).item();
        let grads = g.gradient(loss, &params, false)?;
        let tensors = grads.iter().map(|v| g.value(*v).clone()).collect();
        Ok((value, LayerGrads { tensors }))
    }

    /// One gradient per example, each of the single-example mean loss.
    pub fn per_example_grads(&self, features: &Tensor, labels: &[usize]) -> Result<Vec<LayerGrads>> {
        self.check_batch(features, labels)?;
        (0..labels.len())
            .into_par_iter()
            .map(|i| {
                let x = features.select_rows(&[i]);
                self.loss_and_grad(&x, &labels[i..=i]).map(|(_, g)| g)
            })
            .collect()
    }

    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params: Vec<_> = self.params.iter().map(|p| g.constant(p.clone())).collect();
        let x = g.constant(features.clone());
        let logits = self.spec.forward(&mut g, &params, x)?;
        Ok(g.value(logits).clone())
    }

    pub fn loss(&self, features: &Tensor, labels: &[usize]) -> Result<f64> {
        Ok(self.evaluate(features, labels)?.loss)
    }

    pub fn evaluate(&self, features: &Tensor, labels: &[usize]) -> Result<Evaluation> {
        self.check_batch(features, labels)?;
        let logits = self.logits(features)?;
        let m = self.spec.classes;
        let mut loss = 0.0;
        let mut correct = 0;
        for (row, &y) in logits.data().chunks_exact(m).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            let pred = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            correct += usize::from(pred == y);
        }
        let n = labels.len() as f64;
        Ok(Evaluation {
            loss: loss / n,
            accuracy: correct as f64 / n,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}
