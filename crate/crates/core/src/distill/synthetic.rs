use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Learnable features with a fixed, balanced, class-major label list:
/// `ipc` copies of each class in `classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    features: Tensor,
    labels: Vec<usize>,
    classes: Vec<usize>,
    ipc: usize,
}

fn balanced_labels(classes: &[usize], ipc: usize) -> Vec<usize> {
    classes.iter().flat_map(|&c| std::iter::repeat_n(c, ipc)).collect()
}

impl SyntheticSet {
    pub fn from_parts(features: Tensor, classes: Vec<usize>, ipc: usize) -> Result<Self> {
        if ipc == 0 || classes.is_empty() {
            return Err(Error::Config("a synthetic set needs ipc >= 1 and at least one class".into()));
        }
        if classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("synthetic classes must be strictly increasing".into()));
        }
        let count = ipc * classes.len();
        if features.shape().first() != Some(&count) {
            return Err(Error::Layout(format!(
                "synthetic features {:?} for {count} examples",
                features.shape()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("synthetic features".into()));
        }
        Ok(Self {
            labels: balanced_labels(&classes, ipc),
            features,
            classes,
            ipc,
        })
    }

    /// Features drawn from `N(0, scale^2)`.
    pub fn gaussian(classes: Vec<usize>, ipc: usize, example_shape: &[usize], scale: f64, rng: &mut Rng) -> Result<Self> {
        let count = ipc * classes.len();
        let shape: Vec<usize> = std::iter::once(count).chain(example_shape.iter().copied()).collect();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect();
        Self::from_parts(Tensor::new(shape, data)?, classes, ipc)
    }

    /// Copies a class-balanced dataset, reordered class-major.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let classes = ds.present_classes();
        let hist = ds.histogram();
        let ipc = hist[classes[0]];
        if classes.iter().any(|&c| hist[c] != ipc) {
            return Err(Error::Config(format!("dataset is not class-balanced: {hist:?}")));
        }
        let order: Vec<usize> = classes
            .iter()
            .flat_map(|&c| (0..ds.len()).filter(move |&i| ds.labels[i] == c))
            .collect();
        Self::from_parts(ds.features.select_rows(&order), classes, ipc)
    }

    /// Same labels, new features of identical shape.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::Layout(format!(
                "replacement features {:?} differ from {:?}",
                features.shape(),
                self.features.shape()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("synthetic features".into()));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn ipc(&self) -> usize {
        self.ipc
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    /// Floats on the wire: features plus one per label.
    pub fn payload_floats(&self) -> usize {
        self.features.len() + self.labels.len()
    }
}
