use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Cluster centers for `classes` blobs in `dim` dimensions.
///
/// With `dim >= classes` the centers are `separation * e_c`, the vertices
/// of a scaled simplex. Otherwise they sit on a regular polygon in the first
/// two coordinates with adjacent centers `separation` apart.
pub fn blob_centers(classes: usize, dim: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if classes < 2 || dim == 0 || (dim < classes && dim < 2) {
        return Err(Error::Config(format!(
            "cannot place {classes} blob centers in {dim} dimensions"
        )));
    }
    let centers = (0..classes)
        .map(|c| {
            let mut v = vec![0.0; dim];
            if dim >= classes {
                v[c] = separation;
            } else {
                let radius = separation / (2.0 * (std::f64::consts::PI / classes as f64).sin());
                let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                v[0] = radius * angle.cos();
                v[1] = radius * angle.sin();
            }
            v
        })
        .collect();
    Ok(centers)
}

/// Unit-variance isotropic Gaussian clusters, `per_class` points each, in
/// class-interleaved order.
pub fn gen_blobs(classes: usize, per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::Config("per_class must be at least 1".into()));
    }
    let centers = blob_centers(classes, dim, separation)?;
    let mut r = rng::stream(seed, &[rng::tag::DATA]);
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..per_class {
        for (c, center) in centers.iter().enumerate() {
            for &m in center {
                let z: f64 = StandardNormal.sample(&mut r);
                data.push(m + z);
            }
            labels.push(c);
        }
    }
    Dataset::new(
        format!("blobs{classes}x{dim}"),
        Tensor::new(vec![n, dim], data)?,
        labels,
        classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_neighbors_are_separated() {
        let c = blob_centers(4, 2, 6.0).unwrap();
        let d = ((c[0][0] - c[1][0]).powi(2) + (c[0][1] - c[1][1]).powi(2)).sqrt();
        assert!((d - 6.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_is_exact() {
        let ds = gen_blobs(3, 7, 2, 5.0, 1).unwrap();
        assert_eq!(ds.histogram(), vec![7, 7, 7]);
        assert_eq!(ds.features.shape(), &[21, 2]);
    }
}
