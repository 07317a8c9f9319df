mod common;

use common::{rel_err, rng, smooth_param_fd, uniform};
use fedlap::data::gen_blobs;
use fedlap::error::Error;
use fedlap::models::{checkpoint, LayerGrads, ModelSpec, ModelState};
use fedlap::tensor::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn blob_batch(n_per_class: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let ds = gen_blobs(3, n_per_class, 4, 3.0, seed).unwrap();
    (ds.features, ds.labels)
}

#[test]
fn init_is_deterministic_per_seed() {
    let spec = ModelSpec::convnet(8, 4, 3);
    let a = ModelState::init(spec.clone(), 5).unwrap();
    let b = ModelState::init(spec.clone(), 5).unwrap();
    let c = ModelState::init(spec, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.flatten(), c.flatten());
}

#[test]
fn kaiming_uniform_weight_spread() {
    // U(-b, b) with b = sqrt(6 / fan_in) has std sqrt(2 / fan_in)
    let w = ModelState::init(ModelSpec::mlp(64, 64, 2), 1).unwrap();
    let data = w.params()[0].data();
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let std = (data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let target = (2.0f64 / 64.0).sqrt();
    assert!((std / target - 1.0).abs() < 0.2, "std {std} vs {target}");
    let bound = (6.0f64 / 64.0).sqrt();
    assert!(data.iter().all(|v| v.abs() <= bound));
    assert!(w.params()[1].data().iter().all(|&b| b == 0.0));
}

#[test]
fn duplicated_batch_has_identical_loss_and_gradient() {
    let w = ModelState::init(ModelSpec::mlp(4, 6, 3), 2).unwrap();
    let (x, y) = blob_batch(2, 3);
    let mut doubled = x.data().to_vec();
    doubled.extend_from_slice(x.data());
    let x2 = Tensor::new(vec![12, 4], doubled).unwrap();
    let y2: Vec<usize> = y.iter().chain(&y).copied().collect();
    let (l1, g1) = w.loss_and_grad(&x, &y).unwrap();
    let (l2, g2) = w.loss_and_grad(&x2, &y2).unwrap();
    assert!((l1 - l2).abs() < 1e-14);
    assert!(rel_err(&g1.flatten(), &g2.flatten(), 1e-12) < 1e-12);
}

#[test]
fn empty_batch_is_rejected() {
    let w = ModelState::init(ModelSpec::mlp(4, 6, 3), 2).unwrap();
    let x = Tensor::new(vec![0, 4], vec![]).unwrap();
    assert!(matches!(w.loss_and_grad(&x, &[]), Err(Error::EmptyBatch)));
}

#[test]
fn loss_falls_as_margin_grows() {
    // a linear model whose logits are margin * one_hot(label)
    let spec = ModelSpec {
        input_shape: vec![2],
        layers: vec![fedlap::models::Layer::Dense { inputs: 2, outputs: 2 }],
        classes: 2,
    };
    let x = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let losses: Vec<f64> = [1.0, 2.0, 4.0]
        .iter()
        .map(|&m| {
            let w = ModelState::from_params(
                spec.clone(),
                vec![Tensor::new(vec![2, 2], vec![m, 0.0, 0.0, m]).unwrap(), Tensor::zeros(&[2])],
            )
            .unwrap();
            w.loss(&x, &[0, 1]).unwrap()
        })
        .collect();
    assert!(losses[0] > losses[1] && losses[1] > losses[2] && losses[2] > 0.0);
}

/// Max relative error at the first random point whose finite-difference
/// stencil stays clear of ReLU kinks.
fn fd_check(spec: ModelSpec, seed: u64) -> f64 {
    let mut r = rng(seed);
    loop {
        if let Some(e) = fd_attempt(&spec, seed, &mut r) {
            return e;
        }
    }
}

fn fd_attempt(spec: &ModelSpec, seed: u64, r: &mut rand_chacha::ChaCha8Rng) -> Option<f64> {
    // random biases keep pre-activations off the ReLU kink, which zero
    // biases under an all-zero receptive field would sit on exactly
    let init = ModelState::init(spec.clone(), seed).unwrap();
    let flat: Vec<f64> = init.flatten().iter().map(|v| v + r.random_range(-0.1..0.1)).collect();
    let w = init.unflatten(&flat).unwrap();
    let n = 3;
    let mut shape = vec![n];
    shape.extend(&spec.input_shape);
    let x = uniform(r, &shape, -1.0, 1.0);
    let y: Vec<usize> = (0..n).map(|_| r.random_range(0..spec.classes)).collect();
    let (_, g) = w.loss_and_grad(&x, &y).unwrap();
    let numeric = smooth_param_fd(&w, &x, &y)?;
    Some(rel_err(&g.flatten(), &numeric, 1e-5))
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let e = fd_check(ModelSpec::mlp(2, 32, 4), seed);
        assert!(e < 1e-5, "seed {seed}: {e:e}");
    }
}

#[test]
fn convnet_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let e = fd_check(ModelSpec::convnet(8, 4, 10), seed);
        assert!(e < 1e-5, "seed {seed}: {e:e}");
    }
}

#[test]
fn per_example_gradients() {
    let w = ModelState::init(ModelSpec::convnet(8, 4, 3), 4).unwrap();
    let mut r = rng(4);
    let x = uniform(&mut r, &[5, 1, 8, 8], 0.0, 1.0);
    let y = vec![0, 2, 1, 1, 0];
    let per = w.per_example_grads(&x, &y).unwrap();
    assert_eq!(per.len(), 5);
    let (_, batch) = w.loss_and_grad(&x, &y).unwrap();
    let mean = LayerGrads::mean_of(&per, 5.0).unwrap();
    for (a, b) in batch.flatten().iter().zip(mean.flatten()) {
        assert!((a - b).abs() < 1e-10);
    }

    let single = x.select_rows(&[2]);
    let (_, g) = w.loss_and_grad(&single, &[1]).unwrap();
    assert_eq!(w.per_example_grads(&single, &[1]).unwrap(), vec![g]);

    let perm = [3, 0, 4, 1, 2];
    let xp = x.select_rows(&perm);
    let yp: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
    let permuted = w.per_example_grads(&xp, &yp).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(permuted[k], per[i]);
    }
}

#[test]
fn conv_gradient_view_rows_are_output_channels() {
    let w = ModelState::init(ModelSpec::convnet(8, 4, 3), 0).unwrap();
    let g = LayerGrads::zeros_like(&w);
    assert_eq!(g.view_2d(0), (4, 9));
    assert_eq!(g.view_2d(1), (4, 1));
    assert_eq!(g.view_2d(2), (4, 36));
}

fn single_param_states(values: &[f64]) -> (ModelState, ModelState) {
    let spec = ModelSpec::mlp(1, 1, 2);
    let base = ModelState::init(spec, 0).unwrap();
    let mut moved = base.flatten();
    for (i, v) in values.iter().enumerate() {
        moved[i] += v;
    }
    let other = base.unflatten(&moved).unwrap();
    (base, other)
}

#[test]
fn distance_examples() {
    let (a, b) = single_param_states(&[0.3]);
    assert_eq!(a.distance(&a).unwrap(), 0.0);
    assert!((a.distance(&b).unwrap() - 0.3).abs() < 1e-15);
    let (a, b) = single_param_states(&[0.3, 0.4]);
    assert!((a.distance(&b).unwrap() - 0.5).abs() < 1e-15);
    let other = ModelState::init(ModelSpec::mlp(2, 1, 2), 0).unwrap();
    assert!(matches!(a.distance(&other), Err(Error::Layout(_))));
}

/// `f(w) = 1/2 |w|^2` has gradient `w`.
fn quadratic_grad(w: &ModelState) -> LayerGrads {
    LayerGrads::new(w.params().to_vec())
}

#[test]
fn apply_step_examples() {
    let spec = ModelSpec::mlp(1, 1, 2);
    let ones = |s: &ModelSpec| {
        ModelState::from_params(s.clone(), s.param_shapes().iter().map(|p| Tensor::full(p, 1.0)).collect()).unwrap()
    };
    let w = ones(&spec);
    let stepped = w.apply_step(&quadratic_grad(&w), 0.1).unwrap();
    assert!(stepped.flatten().iter().all(|&v| (v - 0.9).abs() < 1e-15));
    assert_eq!(stepped.step, w.step + 1);

    let frozen = w.apply_step(&quadratic_grad(&w), 0.0).unwrap();
    assert_eq!(frozen.params(), w.params());
    assert_eq!(frozen.step, 1);

    // two re-evaluated steps: 1 -> 0.9 -> 0.81; one summed step: 1 - 0.2 = 0.8
    let two = stepped.apply_step(&quadratic_grad(&stepped), 0.1).unwrap();
    let mut summed = quadratic_grad(&w);
    summed.accumulate(&quadratic_grad(&w));
    let one = w.apply_step(&summed, 0.1).unwrap();
    assert!((two.flatten()[0] - 0.81).abs() < 1e-15);
    assert!((one.flatten()[0] - 0.8).abs() < 1e-15);

    let bad = LayerGrads::new(w.params().iter().map(|p| p.map(|_| f64::NAN)).collect());
    assert!(matches!(w.apply_step(&bad, 0.1), Err(Error::NonFinite(_))));
}

#[test]
fn checkpoint_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut w = ModelState::init(ModelSpec::convnet(8, 3, 4), 9).unwrap();
    w.step = 17;
    w.round = 3;
    checkpoint::save_model(&path, &w).unwrap();
    assert_eq!(checkpoint::load_model(&path).unwrap(), w);
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let w = ModelState::init(ModelSpec::mlp(2, 3, 2), 0).unwrap();
    let mut buf = Vec::new();
    checkpoint::write_model(&mut buf, &w).unwrap();
    buf.truncate(buf.len() - 3);
    assert!(checkpoint::read_model(buf.as_slice()).is_err());
    buf[0] ^= 0xff;
    assert!(checkpoint::read_model(buf.as_slice()).is_err());
}

proptest! {
    #[test]
    fn flatten_round_trips(seed in 0u64..500) {
        let w = ModelState::init(ModelSpec::mlp(3, 5, 2), seed).unwrap();
        let back = w.unflatten(&w.flatten()).unwrap();
        prop_assert_eq!(back, w);
    }

    #[test]
    fn distance_is_a_metric(s1 in 0u64..200, s2 in 0u64..200, s3 in 0u64..200) {
        let spec = ModelSpec::mlp(3, 4, 2);
        let a = ModelState::init(spec.clone(), s1).unwrap();
        let b = ModelState::init(spec.clone(), s2).unwrap();
        let c = ModelState::init(spec, s3).unwrap();
        let ab = a.distance(&b).unwrap();
        prop_assert_eq!(ab, b.distance(&a).unwrap());
        prop_assert_eq!(a.distance(&a).unwrap(), 0.0);
        prop_assert!(ab <= a.distance(&c).unwrap() + c.distance(&b).unwrap() + 1e-12);
    }

    #[test]
    fn per_example_mean_matches_batch(seed in 0u64..200, n in 1usize..6) {
        let w = ModelState::init(ModelSpec::mlp(4, 5, 3), seed).unwrap();
        let ds = gen_blobs(3, n, 4, 2.0, seed).unwrap();
        let (_, g) = w.loss_and_grad(&ds.features, &ds.labels).unwrap();
        let per = w.per_example_grads(&ds.features, &ds.labels).unwrap();
        let mean = LayerGrads::mean_of(&per, per.len() as f64).unwrap();
        for (a, b) in g.flatten().iter().zip(mean.flatten()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
