mod common;

use common::{fd, rel_err, rng, uniform};
use fedlap::data::{gen_blobs, Dataset};
use fedlap::distill::{
    client_execute, cosine_distance, magnitude_calibration, matching_loss, measure_radius, mse_only_loss,
    set_matching_loss, synth_step, MatchConfig, Mode, RadiusMode, SyntheticSet, TrajectoryLog,
};
use fedlap::error::Error;
use fedlap::models::{LayerGrads, ModelSpec, ModelState};
use fedlap::privacy::DpConfig;
use fedlap::rng::stream;
use fedlap::tensor::Tensor;
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn one(shape: &[usize], data: &[f64]) -> LayerGrads {
    LayerGrads::new(vec![t(shape, data)])
}

#[test]
fn cosine_distance_examples() {
    let a = t(&[2, 2], &[1.0, 2.0, -3.0, 0.5]);
    assert!(cosine_distance(&a, &a).unwrap().abs() < 1e-15);
    let rows = t(&[2, 2], &[1.0, 0.0, 1.0, 0.0]);
    let orth = t(&[2, 2], &[0.0, 1.0, 0.0, 1.0]);
    assert_eq!(cosine_distance(&rows, &orth).unwrap(), 2.0);
    let d = cosine_distance(&t(&[1, 2], &[3.0, 4.0]), &t(&[1, 2], &[6.0, 8.0])).unwrap();
    assert!(d.abs() < 1e-15);
    assert!(matches!(
        cosine_distance(&t(&[1, 2], &[1.0, 0.0]), &t(&[2, 1], &[1.0, 0.0])),
        Err(Error::Layout(_))
    ));
}

#[test]
fn zero_rows_in_cosine_distance() {
    // both rows zero: no information either way; one zero: maximally uninformative
    let z = t(&[1, 2], &[0.0, 0.0]);
    let v = t(&[1, 2], &[1.0, 1.0]);
    assert_eq!(cosine_distance(&z, &z).unwrap(), 0.0);
    assert_eq!(cosine_distance(&z, &v).unwrap(), 1.0);
    assert_eq!(cosine_distance(&v, &z).unwrap(), 1.0);
}

#[test]
fn matching_loss_examples() {
    let g = one(&[1, 2], &[1.0, 0.0]);
    let h = one(&[1, 2], &[0.0, 1.0]);
    assert_eq!(matching_loss(&g, &g, 0.1).unwrap(), 0.0);
    assert!((matching_loss(&g, &h, 0.1).unwrap() - 1.2).abs() < 1e-15);
    let doubled = g.scale(2.0);
    assert!(matching_loss(&g, &doubled, 0.0).unwrap().abs() < 1e-15);
    let other = one(&[2, 1], &[1.0, 0.0]);
    assert!(matches!(matching_loss(&g, &other, 0.1), Err(Error::Layout(_))));
}

#[test]
fn mse_only_examples() {
    let g = one(&[1, 2], &[1.0, 0.0]);
    let h = one(&[1, 2], &[0.0, 1.0]);
    assert_eq!(mse_only_loss(&g, &g).unwrap(), 0.0);
    assert_eq!(mse_only_loss(&g, &h).unwrap(), 2.0);
    assert_ne!(mse_only_loss(&g, &g.scale(2.0)).unwrap(), 0.0);
}

#[test]
fn magnitude_calibration_examples() {
    let g = one(&[2], &[3.0, 4.0]);
    let out = magnitude_calibration(&g, &[10.0]).unwrap();
    assert_eq!(out.tensors()[0].data(), &[6.0, 8.0]);
    assert_eq!(magnitude_calibration(&g, &[5.0]).unwrap(), g);

    let two = LayerGrads::new(vec![t(&[2], &[1.0, 1.0]), t(&[3], &[0.5, -2.0, 1.0])]);
    let out = magnitude_calibration(&two, &[2.0, 0.25]).unwrap();
    assert!((out.tensors()[0].norm() - 2.0).abs() < 1e-15);
    assert!((out.tensors()[1].norm() - 0.25).abs() < 1e-15);

    let zero = LayerGrads::new(vec![t(&[2], &[1.0, 1.0]), t(&[2], &[0.0, 0.0])]);
    assert!(matches!(magnitude_calibration(&zero, &[1.0, 1.0]), Err(Error::ZeroNorm(1))));
    assert!(matches!(magnitude_calibration(&g, &[0.0]), Err(Error::Config(_))));
}

fn tiny_problem(seed: u64) -> (ModelState, LayerGrads, SyntheticSet) {
    let ds = gen_blobs(2, 4, 2, 3.0, seed).unwrap();
    let w = ModelState::init(ModelSpec::mlp(2, 4, 2), seed).unwrap();
    let (_, gd) = w.loss_and_grad(&ds.features, &ds.labels).unwrap();
    let set = SyntheticSet::gaussian(vec![0, 1], 2, &[2], 1.0, &mut stream(seed, &[99])).unwrap();
    (w, gd, set)
}

#[test]
fn zero_rate_leaves_the_set_unchanged() {
    let (w, gd, set) = tiny_problem(1);
    let cfg = MatchConfig { tau: 0.0, ..MatchConfig::plain() };
    assert_eq!(synth_step(&set, &w, &gd, &cfg).unwrap(), set);
}

#[test]
fn synth_steps_descend_on_most_seeds() {
    let cfg = MatchConfig { tau: 1.0, ..MatchConfig::plain() };
    let seeds = 50;
    let mut descended = 0;
    for seed in 0..seeds {
        let (w, gd, set) = tiny_problem(seed);
        let before = set_matching_loss(&set, &w, &gd, &cfg).unwrap();
        let mut s = set;
        for _ in 0..5 {
            s = synth_step(&s, &w, &gd, &cfg).unwrap();
        }
        if set_matching_loss(&s, &w, &gd, &cfg).unwrap() <= before {
            descended += 1;
        }
    }
    assert!(descended * 10 >= seeds * 9, "{descended}/{seeds} seeds descended");
}

#[test]
fn matched_set_is_stationary() {
    let (w, _, set) = tiny_problem(3);
    let (_, gs) = w.loss_and_grad(set.features(), set.labels()).unwrap();
    let out = synth_step(&set, &w, &gs, &MatchConfig::plain()).unwrap();
    let moved = rel_err(out.features().data(), set.features().data(), 1.0);
    assert!(moved < 1e-12, "moved by {moved:e}");
}

#[test]
fn meta_gradient_matches_finite_differences() {
    // one synthetic example through a single 2-unit dense layer
    let spec = ModelSpec {
        input_shape: vec![3],
        layers: vec![fedlap::models::Layer::Dense { inputs: 3, outputs: 2 }],
        classes: 2,
    };
    let cfg = MatchConfig { tau: 1.0, ..MatchConfig::plain() };
    for seed in 0..20 {
        let mut r = rng(seed);
        let w = ModelState::from_params(
            spec.clone(),
            vec![uniform(&mut r, &[2, 3], -1.0, 1.0), uniform(&mut r, &[2], -0.5, 0.5)],
        )
        .unwrap();
        let gd = LayerGrads::new(vec![uniform(&mut r, &[2, 3], -1.0, 1.0), uniform(&mut r, &[2], -1.0, 1.0)]);
        let set = SyntheticSet::from_parts(uniform(&mut r, &[1, 3], -1.0, 1.0), vec![1], 1).unwrap();
        let stepped = synth_step(&set, &w, &gd, &cfg).unwrap();
        let meta: Vec<f64> = set
            .features()
            .data()
            .iter()
            .zip(stepped.features().data())
            .map(|(a, b)| a - b)
            .collect();
        let numeric = fd(
            |x| set_matching_loss(&set.with_features(x.clone()).unwrap(), &w, &gd, &cfg).unwrap(),
            set.features(),
        );
        let e = rel_err(&meta, numeric.data(), 1e-5);
        assert!(e < 1e-3, "seed {seed}: {e:e}");
    }
}

fn client_data(seed: u64) -> Dataset {
    gen_blobs(2, 20, 2, 4.0, seed).unwrap()
}

fn fresh_set(data: &Dataset, ipc: usize, seed: u64) -> SyntheticSet {
    SyntheticSet::gaussian(data.present_classes(), ipc, data.example_shape(), 1.0, &mut stream(seed, &[7])).unwrap()
}

fn quick_cfg() -> MatchConfig {
    MatchConfig {
        tau: 1.0,
        batch_size: 8,
        ..MatchConfig::plain()
    }
}

#[test]
fn frozen_model_loop_ends_at_the_cap() {
    let data = client_data(0);
    let w = ModelState::init(ModelSpec::mlp(2, 8, 2), 0).unwrap();
    let cfg = quick_cfg();
    let out = client_execute(&data, 10.0, &w, &cfg, Mode::Plain, fresh_set(&data, 3, 0), &mut stream(0, &[1])).unwrap();
    assert_eq!(out.synthesis.len(), cfg.while_cap);
    assert!(out.synthesis.distances().all(|d| d == 0.0));
    assert_eq!(out.data_accesses, cfg.while_cap);
    assert!(out.radius <= 10.0);
}

#[test]
fn moving_model_stays_inside_the_radius_at_loop_entry() {
    let data = client_data(1);
    let w = ModelState::init(ModelSpec::mlp(2, 8, 2), 1).unwrap();
    let cfg = MatchConfig {
        r_i: 3,
        r_l: 4,
        eta: 0.5,
        while_cap: 20,
        ..quick_cfg()
    };
    let r = 0.3;
    let out = client_execute(&data, r, &w, &cfg, Mode::Plain, fresh_set(&data, 3, 1), &mut stream(1, &[1])).unwrap();
    assert!(out.synthesis.distances().all(|d| d < r));
    assert!(out.radius <= r);
    assert!(out.calibration.distances().all(|d| d < r));
    assert_eq!(out.set.labels(), fresh_set(&data, 3, 1).labels());
}

#[test]
fn client_execute_is_deterministic() {
    let data = client_data(2);
    let w = ModelState::init(ModelSpec::mlp(2, 8, 2), 2).unwrap();
    let run = || {
        client_execute(&data, 5.0, &w, &quick_cfg(), Mode::Plain, fresh_set(&data, 2, 2), &mut stream(2, &[1])).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.set, b.set);
    assert_eq!(a.radius.to_bits(), b.radius.to_bits());
    assert_eq!(a.synthesis, b.synthesis);
}

#[test]
fn private_mode_reports_the_server_radius() {
    let data = client_data(3);
    let w = ModelState::init(ModelSpec::mlp(2, 8, 2), 3).unwrap();
    let dp = DpConfig {
        batch: 8,
        min_client_size: data.len(),
        ..DpConfig::default()
    };
    let cfg = MatchConfig { tau: 1.0, ..MatchConfig::private() };
    let out = client_execute(&data, 1.5, &w, &cfg, Mode::Private(&dp), fresh_set(&data, 2, 3), &mut stream(3, &[1])).unwrap();
    assert_eq!(out.radius, 1.5);
    assert!(out.calibration.is_empty());
    assert!(out.data_accesses <= cfg.r_i * cfg.while_cap);
}

#[test]
fn measured_radius_can_be_switched_off() {
    let data = client_data(4);
    let w = ModelState::init(ModelSpec::mlp(2, 8, 2), 4).unwrap();
    let cfg = MatchConfig {
        radius_mode: RadiusMode::Constant,
        ..quick_cfg()
    };
    let out = client_execute(&data, 2.5, &w, &cfg, Mode::Plain, fresh_set(&data, 2, 4), &mut stream(4, &[1])).unwrap();
    assert_eq!(out.radius, 2.5);
}

#[test]
fn non_positive_radius_is_rejected() {
    let data = client_data(5);
    let w = ModelState::init(ModelSpec::mlp(2, 8, 2), 5).unwrap();
    for r in [0.0, -1.0] {
        let res = client_execute(&data, r, &w, &quick_cfg(), Mode::Plain, fresh_set(&data, 2, 5), &mut stream(5, &[1]));
        assert!(matches!(res, Err(Error::Config(_))));
    }
}

#[test]
fn identity_configuration_matches_exactly() {
    let data = client_data(6);
    let w = ModelState::init(ModelSpec::mlp(2, 8, 2), 6).unwrap();
    let set = SyntheticSet::from_dataset(&data).unwrap();
    let (_, gd) = w.loss_and_grad(&data.features, &data.labels).unwrap();
    let l = set_matching_loss(&set, &w, &gd, &MatchConfig::plain()).unwrap();
    assert!(l < 1e-8, "{l:e}");
}

#[test]
fn measure_radius_examples() {
    let log = |d: &[f64], l: &[f64]| TrajectoryLog {
        entries: d.iter().copied().zip(l.iter().copied()).collect(),
    };
    assert_eq!(
        measure_radius(&log(&[0.0, 0.3, 0.6, 0.9, 1.2], &[1.0, 0.8, 0.7, 0.75, 0.9])),
        0.6
    );
    assert_eq!(measure_radius(&log(&[0.0, 0.5, 1.0], &[3.0, 2.0, 1.0])), 1.0);
    assert_eq!(measure_radius(&log(&[0.0], &[1.0])), 0.0);
}

#[test]
fn synthetic_set_invariants() {
    let set = SyntheticSet::gaussian(vec![1, 4, 7], 3, &[2], 1.0, &mut stream(0, &[])).unwrap();
    assert_eq!(set.len(), 9);
    assert_eq!(set.labels(), &[1, 1, 1, 4, 4, 4, 7, 7, 7]);
    assert_eq!(set.payload_floats(), 9 * 2 + 9);
    assert!(SyntheticSet::from_parts(Tensor::zeros(&[4, 2]), vec![0, 1], 3).is_err());
    assert!(SyntheticSet::from_parts(Tensor::zeros(&[4, 2]), vec![1, 0], 2).is_err());
    assert!(set.with_features(Tensor::zeros(&[9, 3])).is_err());
}

proptest! {
    #[test]
    fn matching_loss_is_non_negative(
        a in proptest::collection::vec(-2.0f64..2.0, 6),
        b in proptest::collection::vec(-2.0f64..2.0, 6),
        lambda in 0.0f64..2.0,
    ) {
        let l = matching_loss(&one(&[3, 2], &a), &one(&[3, 2], &b), lambda).unwrap();
        prop_assert!(l >= -1e-12);
    }

    #[test]
    fn cosine_term_ignores_positive_row_scaling(
        a in proptest::collection::vec(0.1f64..2.0, 6),
        b in proptest::collection::vec(-2.0f64..-0.1, 6),
        s in proptest::collection::vec(0.1f64..10.0, 3),
    ) {
        let scaled: Vec<f64> = b.iter().enumerate().map(|(i, v)| v * s[i / 2]).collect();
        let x = cosine_distance(&t(&[3, 2], &a), &t(&[3, 2], &b)).unwrap();
        let y = cosine_distance(&t(&[3, 2], &a), &t(&[3, 2], &scaled)).unwrap();
        prop_assert!((x - y).abs() < 1e-12);
        let m1 = mse_only_loss(&one(&[3, 2], &a), &one(&[3, 2], &b)).unwrap();
        let m2 = mse_only_loss(&one(&[3, 2], &a), &one(&[3, 2], &scaled)).unwrap();
        prop_assume!(s.iter().any(|v| (v - 1.0).abs() > 1e-3));
        prop_assert!(m1 != m2);
    }

    #[test]
    fn synth_step_keeps_labels_and_size(seed in 0u64..100) {
        let (w, gd, set) = tiny_problem(seed);
        let out = synth_step(&set, &w, &gd, &MatchConfig { tau: 0.5, ..MatchConfig::plain() }).unwrap();
        prop_assert_eq!(out.labels(), set.labels());
        prop_assert_eq!(out.len(), set.len());
        prop_assert_eq!(out.ipc(), set.ipc());
    }
}
