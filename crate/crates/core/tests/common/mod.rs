#![allow(dead_code)]

use fedlap::autodiff::finite_difference;
use fedlap::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform magnitudes in `[lo, hi)` with random signs.
pub fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = r.random_range(lo..hi);
            if r.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Componentwise `|a - b| / max(|a|, |b|, floor)`, maximized.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn fd(f: impl Fn(&Tensor) -> f64, at: &Tensor) -> Tensor {
    finite_difference(f, at, 1e-4)
}

pub fn mnist_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-desk")
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

use fedlap::models::{Layer, ModelSpec, ModelState};

/// Signs of every pre-activation that feeds a ReLU.
pub fn relu_pattern(w: &ModelState, x: &Tensor) -> Vec<bool> {
    let spec = w.spec();
    let mut pattern = Vec::new();
    let mut n_params = 0;
    for (i, layer) in spec.layers.iter().enumerate() {
        if layer.has_params() {
            n_params += 2;
        }
        if spec.layers.get(i + 1) != Some(&Layer::Relu) {
            continue;
        }
        let mut layers = spec.layers[..=i].to_vec();
        layers.push(Layer::Flatten);
        let probe = ModelSpec {
            input_shape: spec.input_shape.clone(),
            classes: preact_width(&spec.input_shape, &layers),
            layers,
        };
        let state = ModelState::from_params(probe, w.params()[..n_params].to_vec()).unwrap();
        pattern.extend(state.logits(x).unwrap().data().iter().map(|&v| v > 0.0));
    }
    pattern
}

fn preact_width(input: &[usize], layers: &[Layer]) -> usize {
    let mut shape = input.to_vec();
    for layer in layers {
        shape = match *layer {
            Layer::Dense { outputs, .. } => vec![outputs],
            Layer::Conv3x3 { out_channels, .. } => vec![out_channels, shape[1], shape[2]],
            Layer::Relu => shape,
            Layer::AvgPool2 => vec![shape[0], shape[1] / 2, shape[2] / 2],
            Layer::Flatten => vec![shape.iter().product()],
        };
    }
    shape.iter().product()
}

/// Central differences of the loss over the flattened parameters, or `None`
/// when some stencil point changes the ReLU pattern (a kink lies inside it).
pub fn smooth_param_fd(w: &ModelState, x: &Tensor, y: &[usize]) -> Option<Vec<f64>> {
    let base = relu_pattern(w, x);
    let mut flat = w.flatten();
    let h = 1e-4;
    let mut out = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        let orig = flat[i];
        let mut eval = |v: f64| {
            flat[i] = v;
            let s = w.unflatten(&flat).unwrap();
            (s.loss(x, y).unwrap(), relu_pattern(&s, x) == base)
        };
        let (hi, ok_hi) = eval(orig + h);
        let (lo, ok_lo) = eval(orig - h);
        flat[i] = orig;
        if !(ok_hi && ok_lo) {
            return None;
        }
        out.push((hi - lo) / (2.0 * h));
    }
    Some(out)
}
