//! Datasets: IDX ingestion, synthetic Gaussian blobs, preprocessing and
//! client partitioning.

mod blobs;
mod idx;
mod partition;

pub use blobs::{blob_centers, gen_blobs};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use partition::{partition, PartitionKind, PartitionSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labeled examples; `features` is `[N, example_shape..]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if features.shape().first() != Some(&labels.len()) {
            return Err(Error::Layout(format!(
                "{} labels for features of shape {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            classes,
        })
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

    pub fn example_len(&self) -> usize {
        self.example_shape().iter().product()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Sorted distinct labels present.
    pub fn present_classes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.classes];
        for &l in &self.labels {
            seen[l] = true;
        }
        (0..self.classes).filter(|&c| seen[c]).collect()
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Inserts a unit channel axis: `[N, H, W]` -> `[N, 1, H, W]`.
    pub fn with_channel_axis(mut self) -> Result<Self> {
        let s = self.features.shape().to_vec();
        if s.len() != 3 {
            return Err(Error::Layout(format!("expected [N, H, W], got {s:?}")));
        }
        self.features = self.features.reshape(&[s[0], 1, s[1], s[2]])?;
        Ok(self)
    }

    /// Average-pools the two trailing (spatial) axes by `factor`.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        let s = self.features.shape();
        if factor == 0 || s.len() < 3 {
            return Err(Error::Layout(format!("cannot downsample {s:?} by {factor}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::Layout(format!("{h}x{w} is not divisible by {factor}")));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (ho, wo) = (h / factor, w / factor);
        let planes = s[..s.len() - 2].iter().product::<usize>();
        let d = self.features.data();
        let norm = (factor * factor) as f64;
        let mut out = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            let base = p * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for u in 0..factor {
                        let row = base + (i * factor + u) * w + j * factor;
                        acc += d[row..row + factor].iter().sum::<f64>();
                    }
                    out.push(acc / norm);
                }
            }
        }
        let mut shape = s.to_vec();
        let r = shape.len();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        Ok(Dataset {
            features: Tensor::new(shape, out)?,
            ..self.clone()
        })
    }
}
