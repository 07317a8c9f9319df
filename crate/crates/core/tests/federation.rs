mod common;

use fedlap::data::{gen_blobs, partition, Dataset, PartitionKind, PartitionSpec};
use fedlap::distill::{MatchConfig, RadiusMode, Sampling, SyntheticSet};
use fedlap::error::Error;
use fedlap::federation::{
    aggregation_weights, data_access_bound, fedavg_round, fedlap_dp_round, fedlap_round, fedsgd_round,
    global_optimize, select_radius, Budget, ClientHandle, FedlapConfig, RadiusStrategy, ServerState,
};
use fedlap::models::{ModelSpec, ModelState};
use fedlap::privacy::{AccountantState, DpConfig};
use fedlap::rng::stream;
use fedlap::tensor::Tensor;
use proptest::prelude::*;

fn blob_clients(seed: u64, clients: usize) -> (Vec<ClientHandle>, Dataset) {
    let ds = gen_blobs(4, 30, 2, 6.0, seed).unwrap();
    let shards = partition(
        &ds,
        &PartitionSpec {
            kind: PartitionKind::DisjointClasses,
            clients,
            seed,
        },
    )
    .unwrap();
    let handles = shards.into_iter().enumerate().map(|(k, d)| ClientHandle::new(k, d, seed)).collect();
    (handles, ds)
}

fn server(seed: u64, strategy: RadiusStrategy, rounds: usize) -> ServerState {
    ServerState::new(ModelState::init(ModelSpec::mlp(2, 16, 4), seed).unwrap(), rounds, strategy, 0.1).unwrap()
}

fn fedlap_cfg() -> FedlapConfig {
    FedlapConfig {
        matching: MatchConfig {
            tau: 1.0,
            batch_size: 16,
            ..MatchConfig::plain()
        },
        ipc: 3,
        warm_start: true,
    }
}

#[test]
fn radius_order_statistics() {
    let r = [2.0, 3.0, 1.0];
    assert_eq!(select_radius(RadiusStrategy::Min, &r).unwrap(), Budget::Radius(1.0));
    assert_eq!(select_radius(RadiusStrategy::Max, &r).unwrap(), Budget::Radius(3.0));
    assert_eq!(select_radius(RadiusStrategy::Median, &r).unwrap(), Budget::Radius(2.0));
    for s in [RadiusStrategy::Min, RadiusStrategy::Max, RadiusStrategy::Median] {
        assert_eq!(select_radius(s, &[0.7]).unwrap(), Budget::Radius(0.7));
        assert!(matches!(select_radius(s, &[]), Err(Error::Config(_))));
    }
    assert_eq!(select_radius(RadiusStrategy::Fixed(100), &r).unwrap(), Budget::Steps(100));
    assert_eq!(select_radius(RadiusStrategy::Fixed(100), &[]).unwrap(), Budget::Steps(100));
    assert_eq!("fixed:100".parse::<RadiusStrategy>().unwrap(), RadiusStrategy::Fixed(100));
    assert!("fixed:0".parse::<RadiusStrategy>().is_err());
}

fn set(seed: u64) -> SyntheticSet {
    SyntheticSet::gaussian(vec![0, 1, 2, 3], 2, &[2], 2.0, &mut stream(seed, &[1])).unwrap()
}

fn model() -> ModelState {
    ModelState::init(ModelSpec::mlp(2, 16, 4), 3).unwrap()
}

#[test]
fn single_set_reduces_to_gradient_descent() {
    let s = set(0);
    let (w, out) = global_optimize(&model(), &[(&s, 1.0)], Budget::Steps(7), 0.1).unwrap();
    let mut manual = model();
    for _ in 0..7 {
        let (_, g) = manual.loss_and_grad(s.features(), s.labels()).unwrap();
        manual = manual.apply_step(&g, 0.1).unwrap();
    }
    assert_eq!(out.steps(), 7);
    assert_eq!(w.params(), manual.params());
}

#[test]
fn identical_equal_weight_sets_match_one_set() {
    let s = set(1);
    let (a, _) = global_optimize(&model(), &[(&s, 0.5), (&s, 0.5)], Budget::Steps(5), 0.1).unwrap();
    let (b, _) = global_optimize(&model(), &[(&s, 1.0)], Budget::Steps(5), 0.1).unwrap();
    assert_eq!(a.params(), b.params());
}

#[test]
fn zero_bound_takes_no_steps() {
    let s = set(2);
    let (w, out) = global_optimize(&model(), &[(&s, 1.0)], Budget::Radius(0.0), 0.1).unwrap();
    assert_eq!(out.steps(), 0);
    assert_eq!(w, model());
}

#[test]
fn radius_bound_is_never_exceeded() {
    let s = set(3);
    let start = model();
    for bound in [0.01, 0.1, 0.5] {
        let (w, out) = global_optimize(&start, &[(&s, 1.0)], Budget::Radius(bound), 0.1).unwrap();
        assert!(bound < 0.5 || out.steps() > 0);
        assert!(out.distances.iter().all(|&d| d <= bound));
        assert!(w.distance(&start).unwrap() <= bound);
    }
}

#[test]
fn weights_must_sum_to_one() {
    let s = set(4);
    let res = global_optimize(&model(), &[(&s, 0.5), (&s, 0.4)], Budget::Steps(1), 0.1);
    assert!(matches!(res, Err(Error::Config(_))));
}

#[test]
fn cosine_learning_rate() {
    let mut s = server(0, RadiusStrategy::Min, 4);
    assert_eq!(s.learning_rate(), 0.1);
    s.round = 3;
    assert!((s.learning_rate() - 0.05).abs() < 1e-15);
}

#[test]
fn fedlap_round_is_deterministic_and_order_free() {
    let (clients, _) = blob_clients(0, 2);
    let s = server(0, RadiusStrategy::Min, 3);
    let cfg = fedlap_cfg();
    let mut a = clients.clone();
    let mut b: Vec<ClientHandle> = clients.into_iter().rev().collect();
    let (sa, ra) = fedlap_round(&s, &mut a, &cfg).unwrap();
    let (sb, rb) = fedlap_round(&s, &mut b, &cfg).unwrap();
    assert_eq!(sa.model, sb.model);
    assert_eq!(ra.radii, rb.radii);
    assert_eq!(ra.distances, rb.distances);
    assert_eq!(sa.round, 2);
}

#[test]
fn min_strategy_respects_every_client_radius() {
    let (mut clients, _) = blob_clients(1, 2);
    let mut s = server(1, RadiusStrategy::Min, 4);
    let cfg = fedlap_cfg();
    for _ in 0..4 {
        let (next, report) = fedlap_round(&s, &mut clients, &cfg).unwrap();
        let bound = report.radii.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(report.budget, Some(Budget::Radius(bound)));
        assert!(report.distances.iter().all(|&d| d <= bound));
        assert!(next.model.distance(&s.model).unwrap() <= bound);
        s = next;
    }
}

#[test]
fn fixed_strategy_takes_exactly_its_budget() {
    let (mut clients, _) = blob_clients(2, 2);
    let s = server(2, RadiusStrategy::Fixed(100), 2);
    let (_, report) = fedlap_round(&s, &mut clients, &fedlap_cfg()).unwrap();
    assert_eq!(report.server_steps(), 100);
}

#[test]
fn fedlap_descends_on_the_union_of_real_data() {
    let mut improvements = Vec::new();
    for seed in 0..3 {
        let (mut clients, all) = blob_clients(seed, 2);
        let mut s = server(seed, RadiusStrategy::Min, 5);
        let before = s.model.loss(&all.features, &all.labels).unwrap();
        for _ in 0..5 {
            s = fedlap_round(&s, &mut clients, &fedlap_cfg()).unwrap().0;
        }
        improvements.push(before - s.model.loss(&all.features, &all.labels).unwrap());
    }
    improvements.sort_by(f64::total_cmp);
    assert!(improvements[1] > 0.0, "{improvements:?}");
}

#[test]
fn communication_is_payload_floats() {
    let (mut clients, _) = blob_clients(3, 2);
    let s = server(3, RadiusStrategy::Min, 2);
    let (_, report) = fedlap_round(&s, &mut clients, &fedlap_cfg()).unwrap();
    // 2 clients x 2 classes x 3 ipc x (2 features + 1 label)
    assert_eq!(report.comm_floats, 2 * 2 * 3 * 3);
    let (_, report) = fedavg_round(&s, &mut clients, 1, 8).unwrap();
    assert_eq!(report.comm_floats, 2 * 2 * s.model.num_params() as u64);
}

fn dp_setup(seed: u64, sigma: f64) -> (Vec<ClientHandle>, FedlapConfig, DpConfig, AccountantState) {
    let (clients, _) = blob_clients(seed, 2);
    let cfg = FedlapConfig {
        matching: MatchConfig {
            tau: 1.0,
            ..MatchConfig::private()
        },
        ipc: 3,
        warm_start: true,
    };
    let dp = DpConfig {
        sigma,
        batch: 16,
        min_client_size: 60,
        ..DpConfig::default()
    };
    let acc = AccountantState::new(&dp, data_access_bound(&cfg.matching)).unwrap();
    (clients, cfg, dp, acc)
}

#[test]
fn private_rounds_charge_the_accountant() {
    let (mut clients, cfg, dp, mut acc) = dp_setup(0, 1.0);
    let mut s = server(0, RadiusStrategy::Min, 3);
    let mut last = 0.0;
    for _ in 0..3 {
        let (next, report, a) = fedlap_dp_round(&s, &mut clients, &cfg, &dp, &acc).unwrap();
        let eps = report.epsilon.unwrap().0;
        assert!(eps > last);
        assert_eq!(report.radii, vec![1.5, 1.5]);
        assert!(report.data_accesses <= 2 * data_access_bound(&cfg.matching));
        last = eps;
        s = next;
        acc = a;
    }
    assert_eq!(acc.rounds, 3);
}

#[test]
fn accountant_schedule_must_match_the_client_loop() {
    let (mut clients, cfg, dp, _) = dp_setup(1, 1.0);
    let wrong = AccountantState::new(&dp, data_access_bound(&cfg.matching) + 1).unwrap();
    let s = server(1, RadiusStrategy::Min, 2);
    assert!(matches!(
        fedlap_dp_round(&s, &mut clients, &cfg, &dp, &wrong),
        Err(Error::Config(_))
    ));
}

#[test]
fn clients_below_the_accounted_size_are_rejected() {
    let (mut clients, cfg, mut dp, _) = dp_setup(2, 1.0);
    dp.min_client_size = 61;
    let acc = AccountantState::new(&dp, data_access_bound(&cfg.matching)).unwrap();
    let s = server(2, RadiusStrategy::Min, 2);
    assert!(matches!(fedlap_dp_round(&s, &mut clients, &cfg, &dp, &acc), Err(Error::Config(_))));
}

#[test]
fn synthesis_steps_are_free_in_the_accountant() {
    let run = |r_b: usize| {
        let (mut clients, mut cfg, dp, acc) = dp_setup(3, 1.0);
        cfg.matching.r_b = r_b;
        let s = server(3, RadiusStrategy::Min, 2);
        fedlap_dp_round(&s, &mut clients, &cfg, &dp, &acc).unwrap().1.epsilon.unwrap()
    };
    let (a, b) = (run(1), run(25));
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

#[test]
fn overwhelming_noise_leaves_chance_accuracy() {
    let mut accs = Vec::new();
    for seed in 0..12 {
        let (mut clients, cfg, dp, mut acc) = dp_setup(seed, 1e6);
        let test = gen_blobs(4, 100, 2, 6.0, 1000 + seed).unwrap();
        let mut s = server(seed, RadiusStrategy::Min, 5);
        for _ in 0..5 {
            let (next, _, a) = fedlap_dp_round(&s, &mut clients, &cfg, &dp, &acc).unwrap();
            s = next;
            acc = a;
        }
        accs.push(s.model.evaluate(&test.features, &test.labels).unwrap().accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.25).abs() <= 0.1, "{accs:?}");
}

#[test]
fn noiseless_unclipped_private_round_equals_plain_round() {
    let (clients, mut cfg, mut dp, acc) = dp_setup(4, 1.0);
    dp.noise_enabled = false;
    dp.clip = f64::INFINITY;
    cfg.matching.batch_size = dp.batch;
    let plain = FedlapConfig {
        matching: MatchConfig {
            sampling: Sampling::Poisson,
            radius_mode: RadiusMode::Constant,
            ..cfg.matching.clone()
        },
        ..cfg.clone()
    };
    let s = server(4, RadiusStrategy::Min, 3);
    let (mut a, mut b) = (clients.clone(), clients);
    let (sa, ra, _) = fedlap_dp_round(&s, &mut a, &cfg, &dp, &acc).unwrap();
    let (sb, rb) = fedlap_round(&s, &mut b, &plain).unwrap();
    assert_eq!(sa.model, sb.model);
    assert_eq!(ra.distances, rb.distances);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.last_set, y.last_set);
    }
}

#[test]
fn fedavg_single_client_full_batch_is_a_gradient_step() {
    let (mut clients, _) = blob_clients(5, 1);
    let s = server(5, RadiusStrategy::Min, 3);
    let (next, _) = fedavg_round(&s, &mut clients, 1, 1000).unwrap();
    let d = &clients[0].data;
    let (_, g) = s.model.loss_and_grad(&d.features, &d.labels).unwrap();
    let want = s.model.apply_step(&g, s.learning_rate()).unwrap();
    // the shuffled batch only changes summation order
    for (a, b) in next.model.flatten().iter().zip(want.flatten()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn fedavg_identical_clients_average_to_either() {
    let ds = gen_blobs(4, 10, 2, 6.0, 6).unwrap();
    let mut clients = vec![ClientHandle::new(0, ds.clone(), 6), ClientHandle::new(1, ds.clone(), 6)];
    let mut solo = vec![ClientHandle::new(0, ds, 6)];
    let s = server(6, RadiusStrategy::Min, 3);
    let (pair, _) = fedavg_round(&s, &mut clients, 2, 1000).unwrap();
    let (one, _) = fedavg_round(&s, &mut solo, 2, 1000).unwrap();
    for (a, b) in pair.model.flatten().iter().zip(one.model.flatten()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn parameter_average_of_two_models() {
    let a = ModelState::init(ModelSpec::mlp(2, 3, 2), 1).unwrap();
    let b = ModelState::init(ModelSpec::mlp(2, 3, 2), 2).unwrap();
    let avg = ModelState::weighted_average(&[(&a, 0.5), (&b, 0.5)]).unwrap();
    for ((x, y), z) in a.flatten().iter().zip(b.flatten()).zip(avg.flatten()) {
        assert!((z - (x + y) / 2.0).abs() < 1e-15);
    }
}

#[test]
fn fedsgd_matches_centralized_batch() {
    let (mut clients, all) = blob_clients(7, 2);
    let s = server(7, RadiusStrategy::Min, 3);
    let (next, _) = fedsgd_round(&s, &mut clients, 1000).unwrap();
    let (_, g) = s.model.loss_and_grad(&all.features, &all.labels).unwrap();
    let want = s.model.apply_step(&g, s.learning_rate()).unwrap();
    for (a, b) in next.model.flatten().iter().zip(want.flatten()) {
        assert!((a - b).abs() < 1e-12);
    }

    let (mut single, _) = blob_clients(7, 1);
    let (next, _) = fedsgd_round(&s, &mut single, 1000).unwrap();
    assert_eq!(next.model.params(), want.params());
}

#[test]
fn fedsgd_zero_gradient_does_not_move() {
    // zero weights and balanced labels: uniform softmax, zero gradient
    let spec = ModelSpec::mlp(2, 4, 2);
    let zero = ModelState::from_params(spec.clone(), spec.param_shapes().iter().map(|s| Tensor::zeros(s)).collect()).unwrap();
    let ds = Dataset::new("z", Tensor::full(&[4, 2], 1.0), vec![0, 1, 0, 1], 2).unwrap();
    let mut clients = vec![ClientHandle::new(0, ds, 0)];
    let s = ServerState::new(zero.clone(), 2, RadiusStrategy::Min, 0.1).unwrap();
    let (next, _) = fedsgd_round(&s, &mut clients, 2).unwrap();
    assert_eq!(next.model.params(), zero.params());
}

#[test]
fn duplicate_client_ids_are_rejected() {
    let (clients, _) = blob_clients(8, 2);
    let mut dup = vec![clients[0].clone(), clients[0].clone()];
    let s = server(8, RadiusStrategy::Min, 2);
    assert!(matches!(fedavg_round(&s, &mut dup, 1, 8), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn aggregation_weights_sum_to_one(sizes in proptest::collection::vec(1usize..500, 1..12)) {
        let clients: Vec<ClientHandle> = sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let ds = Dataset::new("c", Tensor::zeros(&[n, 1]), vec![0; n], 2).unwrap();
                ClientHandle::new(k, ds, 0)
            })
            .collect();
        let w = aggregation_weights(&clients);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn strategies_match_a_sorting_oracle(radii in proptest::collection::vec(0.0f64..10.0, 1..40)) {
        let mut sorted = radii.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(select_radius(RadiusStrategy::Min, &radii).unwrap(), Budget::Radius(sorted[0]));
        prop_assert_eq!(select_radius(RadiusStrategy::Max, &radii).unwrap(), Budget::Radius(sorted[sorted.len() - 1]));
        prop_assert_eq!(
            select_radius(RadiusStrategy::Median, &radii).unwrap(),
            Budget::Radius(sorted[(sorted.len() - 1) / 2])
        );
    }
}
