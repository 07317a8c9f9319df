use super::config::{ExperimentConfig, Method, Task};
use super::metrics::{MetricsRow, MetricsWriter};
use crate::data::{gen_blobs, load_idx, partition, Dataset, PartitionSpec};
use crate::error::{Error, Result};
use crate::federation::{
    data_access_bound, fedavg_round, fedlap_dp_round, fedlap_round, fedsgd_round, Budget, ClientHandle, FedlapConfig,
    RoundReport, ServerState,
};
use crate::models::{checkpoint, ModelSpec, ModelState};
use crate::privacy::{AccountantState, DpConfig};
use crate::rng;

/// Everything a run needs before its first round.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub clients: Vec<ClientHandle>,
    pub test: Dataset,
    pub model: ModelState,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub reports: Vec<RoundReport>,
    pub model: ModelState,
}

fn load_task(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, ModelSpec)> {
    match cfg.task {
        Task::Blobs => {
            let b = &cfg.blobs;
            let train = gen_blobs(b.classes, b.per_class, b.dim, b.separation, rng::derive(cfg.seed, &[rng::tag::DATA]))?;
            let test = gen_blobs(
                b.classes,
                b.test_per_class,
                b.dim,
                b.separation,
                rng::derive(cfg.seed, &[rng::tag::TEST]),
            )?;
            Ok((train, test, ModelSpec::mlp(b.dim, cfg.model.hidden, b.classes)))
        }
        Task::MnistDesk => {
            let dir = cfg.data_dir();
            let m = &cfg.mnist;
            let prepare = |images: &str, labels: &str, limit: usize| -> Result<Dataset> {
                for f in [images, labels] {
                    if !dir.join(f).is_file() {
                        return Err(Error::Config(format!(
                            "{} not found; set mnist.dir or ${}",
                            dir.join(f).display(),
                            super::config::DATA_DIR_ENV
                        )));
                    }
                }
                let ds = load_idx(dir.join(images), dir.join(labels), 10)?;
                let n = limit.min(ds.len());
                let idx: Vec<usize> = (0..n).collect();
                ds.select(&idx).with_channel_axis()?.downsample(m.downsample)
            };
            let train = prepare("train-images-idx3-ubyte", "train-labels-idx1-ubyte", m.train_limit)?;
            let test = prepare("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", m.test_limit)?;
            let side = train.example_shape()[1];
            Ok((train, test, ModelSpec::convnet(side, cfg.model.channels, 10)))
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let (train, test, spec) = load_task(cfg)?;
    let shards = partition(
        &train,
        &PartitionSpec {
            kind: cfg.partition.kind,
            clients: cfg.partition.clients,
            seed: cfg.seed,
        },
    )?;
    let clients = shards
        .into_iter()
        .enumerate()
        .map(|(k, d)| ClientHandle::new(k, d, cfg.seed))
        .collect();
    Ok(Experiment {
        clients,
        test,
        model: ModelState::init(spec, cfg.seed)?,
    })
}

/// The DP configuration with an unset minimum client size filled in.
pub fn resolved_dp(cfg: &ExperimentConfig, clients: &[ClientHandle]) -> DpConfig {
    let mut dp = cfg.dp.clone();
    if dp.min_client_size == 0 {
        dp.min_client_size = clients.iter().map(|c| c.data.len()).min().unwrap_or(0);
    }
    dp
}

fn diverged(round: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Diverged {
            round,
            source: Box::new(e),
        },
        e => e,
    }
}

/// Runs the configured experiment, writing metrics rows (and a final
/// checkpoint) when paths are configured.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let exp = prepare(cfg)?;
    run_prepared(cfg, exp)
}

pub fn run_prepared(cfg: &ExperimentConfig, exp: Experiment) -> Result<RunOutput> {
    let Experiment {
        mut clients,
        test,
        model,
    } = exp;
    let mut writer = cfg.output.as_ref().map(MetricsWriter::create).transpose()?;
    let mut server = ServerState::new(model, cfg.rounds, cfg.radius_strategy, cfg.matching.eta)?;
    let fedlap = FedlapConfig {
        matching: cfg.matching.clone(),
        ipc: cfg.ipc,
        warm_start: cfg.warm_start,
    };
    let dp = resolved_dp(cfg, &clients);
    let mut accountant = match cfg.method {
        Method::FedlapDp => Some(AccountantState::new(&dp, data_access_bound(&cfg.matching))?),
        _ => None,
    };

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut comm = 0u64;
    for m in 1..=cfg.rounds {
        let (next, report) = match cfg.method {
            Method::Fedlap => fedlap_round(&server, &mut clients, &fedlap),
            Method::FedlapDp => {
                let acc = accountant.as_ref().expect("accountant exists for the private method");
                fedlap_dp_round(&server, &mut clients, &fedlap, &dp, acc).map(|(s, r, a)| {
                    accountant = Some(a);
                    (s, r)
                })
            }
            Method::Fedavg => fedavg_round(&server, &mut clients, cfg.fedavg.local_epochs, cfg.fedavg.batch_size),
            Method::Fedsgd => fedsgd_round(&server, &mut clients, cfg.fedsgd.batch_size),
        }
        .map_err(diverged(m))?;
        server = next;
        comm += report.comm_floats;

        if m % cfg.eval_every == 0 || m == cfg.rounds {
            let eval = server.model.evaluate(&test.features, &test.labels)?;
            if !eval.loss.is_finite() {
                return Err(diverged(m)(Error::NonFinite("test loss".into())));
            }
            let row = MetricsRow {
                round: m,
                comm_cost: comm,
                test_accuracy: eval.accuracy,
                test_loss: eval.loss,
                radius: match report.budget {
                    Some(Budget::Radius(r)) => Some(r),
                    _ => None,
                },
                epsilon: report.epsilon.map(|e| e.0),
                alpha: report.epsilon.map(|e| e.1),
            };
            if let Some(w) = writer.as_mut() {
                w.append(&row)?;
            }
            rows.push(row);
        }
        reports.push(report);
    }
    if let Some(path) = &cfg.checkpoint {
        checkpoint::save_model(path, &server.model)?;
    }
    Ok(RunOutput {
        rows,
        reports,
        model: server.model,
    })
}
