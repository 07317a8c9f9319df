use crate::autodiff::{finite_difference, max_relative_error};
use crate::data::{gen_blobs, partition, PartitionKind, PartitionSpec};
use crate::distill::{matching_loss, set_matching_loss, synth_step, MatchConfig, SyntheticSet};
use crate::error::Result;
use crate::models::{checkpoint, LayerGrads, ModelSpec, ModelState};
use crate::privacy::quadrature::rdp_sgm_quadrature;
use crate::privacy::{rdp_sgm, rdp_to_dp};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Fast invariant checks over every module.
pub fn selftest() -> Vec<Check> {
    vec![
        check("first-order gradient vs finite differences", || {
            let ds = gen_blobs(3, 4, 5, 3.0, 1)?;
            let w = ModelState::init(ModelSpec::mlp(5, 6, 3), 2)?;
            let (_, g) = w.loss_and_grad(&ds.features, &ds.labels)?;
            let flat = Tensor::vector(w.flatten());
            let fd = finite_difference(
                |p| w.unflatten(p.data()).and_then(|s| s.loss(&ds.features, &ds.labels)).unwrap_or(f64::NAN),
                &flat,
                1e-4,
            );
            let err = max_relative_error(&g.flatten(), fd.data());
            Ok((err < 1e-5, format!("max relative error {err:.2e}")))
        }),
        check("meta-gradient vs finite differences", || {
            let ds = gen_blobs(2, 3, 2, 3.0, 3)?;
            let w = ModelState::init(ModelSpec::mlp(2, 4, 2), 4)?;
            let (_, gd) = w.loss_and_grad(&ds.features, &ds.labels)?;
            let set = SyntheticSet::gaussian(vec![0, 1], 1, &[2], 1.0, &mut crate::rng::stream(5, &[]))?;
            let cfg = MatchConfig {
                tau: 1.0,
                ..MatchConfig::plain()
            };
            let stepped = synth_step(&set, &w, &gd, &cfg)?;
            let meta: Vec<f64> = set
                .features()
                .data()
                .iter()
                .zip(stepped.features().data())
                .map(|(a, b)| a - b)
                .collect();
            let fd = finite_difference(
                |x| {
                    set.with_features(x.clone())
                        .and_then(|s| set_matching_loss(&s, &w, &gd, &cfg))
                        .unwrap_or(f64::NAN)
                },
                set.features(),
                1e-5,
            );
            let err = max_relative_error(&meta, fd.data());
            Ok((err < 1e-3, format!("max relative error {err:.2e}")))
        }),
        check("sampled Gaussian RDP closed form", || {
            let a = rdp_sgm(1.0, 1.0, 2)?;
            let b = rdp_sgm(0.5, 1.0, 2)?;
            let want = (1.0 + 0.25 * (std::f64::consts::E - 1.0)).ln();
            Ok(((a - 1.0).abs() < 1e-12 && (b - want).abs() < 1e-9, format!("{a}, {b}")))
        }),
        check("sampled Gaussian RDP vs quadrature", || {
            let mut worst = 0.0f64;
            for &(q, s, a) in &[(0.01, 1.0, 8u32), (0.1, 0.5, 4), (0.5, 2.0, 16)] {
                let exact = rdp_sgm(q, s, a)?;
                let quad = rdp_sgm_quadrature(q, s, f64::from(a))?;
                worst = worst.max((exact - quad).abs() / exact);
            }
            Ok((worst < 1e-6, format!("max relative error {worst:.2e}")))
        }),
        check("RDP to (epsilon, delta) conversion", || {
            let (eps, _) = rdp_to_dp(&[2], &[1.0], 1e-5)?;
            Ok(((eps - 11.126631).abs() < 1e-6, format!("epsilon {eps:.7}")))
        }),
        check("matching loss of identical gradients", || {
            let ds = gen_blobs(2, 5, 3, 3.0, 6)?;
            let w = ModelState::init(ModelSpec::mlp(3, 4, 2), 7)?;
            let (_, g) = w.loss_and_grad(&ds.features, &ds.labels)?;
            let v = matching_loss(&g, &g, 0.1)?;
            Ok((v.abs() < 1e-12, format!("{v:e}")))
        }),
        check("per-example mean equals batch gradient", || {
            let ds = gen_blobs(3, 4, 4, 3.0, 8)?;
            let w = ModelState::init(ModelSpec::mlp(4, 5, 3), 9)?;
            let (_, g) = w.loss_and_grad(&ds.features, &ds.labels)?;
            let per = w.per_example_grads(&ds.features, &ds.labels)?;
            let mean = LayerGrads::mean_of(&per, per.len() as f64)?;
            let err = g
                .flatten()
                .iter()
                .zip(mean.flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok((err < 1e-10, format!("max abs difference {err:.1e}")))
        }),
        check("partition is disjoint and exhaustive", || {
            let ds = gen_blobs(4, 6, 2, 3.0, 10)?;
            let shards = partition(
                &ds,
                &PartitionSpec {
                    kind: PartitionKind::DisjointClasses,
                    clients: 2,
                    seed: 0,
                },
            )?;
            let total: usize = shards.iter().map(|s| s.len()).sum();
            let classes: Vec<Vec<usize>> = shards.iter().map(|s| s.present_classes()).collect();
            Ok((
                total == ds.len() && classes == vec![vec![0, 1], vec![2, 3]],
                format!("{total} examples, classes {classes:?}"),
            ))
        }),
        check("checkpoint round trip", || {
            let w = ModelState::init(ModelSpec::convnet(8, 2, 3), 11)?;
            let mut buf = Vec::new();
            checkpoint::write_model(&mut buf, &w)?;
            let back = checkpoint::read_model(buf.as_slice())?;
            Ok((back == w, format!("{} bytes", buf.len())))
        }),
    ]
}
