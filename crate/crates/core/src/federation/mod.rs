//! Server-side orchestration: FedLAP and FedLAP-DP rounds, radius
//! strategies, and the FedAvg/FedSGD baselines.

mod baselines;
mod radius;

pub use baselines::{fedavg_round, fedsgd_round};
pub use radius::{select_radius, Budget, RadiusStrategy};

use rayon::prelude::*;

use crate::data::Dataset;
use crate::distill::{client_execute, ClientOutput, MatchConfig, Mode, SyntheticSet};
use crate::error::{Error, Result};
use crate::models::{LayerGrads, ModelState};
use crate::privacy::{AccountantState, DpConfig};
use crate::rng::{self, Rng};

/// Safety cap on radius-bounded server steps per round.
pub const STEP_CAP: usize = 10_000;

#[derive(Clone, Debug)]
pub struct ClientHandle {
    pub id: usize,
    pub data: Dataset,
    pub seed: u64,
    /// Synthetic set from the previous round, for warm starts.
    pub last_set: Option<SyntheticSet>,
}

impl ClientHandle {
    pub fn new(id: usize, data: Dataset, seed: u64) -> Self {
        Self {
            id,
            data,
            seed,
            last_set: None,
        }
    }

    /// Stream for this client's work in round `m`.
    pub fn rng(&self, m: usize, purpose: u64) -> Rng {
        rng::stream(self.seed, &[rng::tag::CLIENT, self.id as u64, m as u64, purpose])
    }
}

/// Clients sorted by ascending id, with ids checked unique.
pub fn order_clients(clients: &mut [ClientHandle]) -> Result<()> {
    clients.sort_by_key(|c| c.id);
    if clients.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::Config("client ids must be unique".into()));
    }
    if clients.is_empty() {
        return Err(Error::Config("at least one client is required".into()));
    }
    Ok(())
}

/// `N_k / N` in client order.
pub fn aggregation_weights(clients: &[ClientHandle]) -> Vec<f64> {
    let total: usize = clients.iter().map(|c| c.data.len()).sum();
    clients.iter().map(|c| c.data.len() as f64 / total as f64).collect()
}

#[derive(Clone, Debug)]
pub struct ServerState {
    pub model: ModelState,
    /// Current round, starting at 1.
    pub round: usize,
    pub total_rounds: usize,
    pub strategy: RadiusStrategy,
    /// Base learning rate before decay.
    pub eta: f64,
}

impl ServerState {
    pub fn new(model: ModelState, total_rounds: usize, strategy: RadiusStrategy, eta: f64) -> Result<Self> {
        if total_rounds == 0 {
            return Err(Error::Config("at least one round is required".into()));
        }
        if !(eta > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {eta}")));
        }
        Ok(Self {
            model,
            round: 1,
            total_rounds,
            strategy,
            eta,
        })
    }

    /// Cosine decay: `eta * (1 + cos(pi (m - 1) / M)) / 2`.
    pub fn learning_rate(&self) -> f64 {
        let progress = (self.round - 1) as f64 / self.total_rounds as f64;
        self.eta * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    fn advance(&self, model: ModelState) -> Self {
        let mut model = model;
        model.round = self.round as u64;
        Self {
            model,
            round: self.round + 1,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GlobalOutcome {
    /// Distance from the round's start for every accepted iterate.
    pub distances: Vec<f64>,
}

impl GlobalOutcome {
    pub fn steps(&self) -> usize {
        self.distances.len()
    }
}

/// Weighted full-batch gradient `sum_k w_k grad L(w, S_k)`, accumulated in
/// list order.
pub fn weighted_gradient(model: &ModelState, sets: &[(&SyntheticSet, f64)]) -> Result<LayerGrads> {
    let grads = sets
        .par_iter()
        .map(|(s, _)| model.loss_and_grad(s.features(), s.labels()).map(|(_, g)| g))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = grads[0].scale(sets[0].1);
    for (g, (_, w)) in grads.iter().zip(sets).skip(1) {
        acc.accumulate(&g.scale(*w));
    }
    Ok(acc)
}

/// Descends on the weighted synthetic objective from `start`.
///
/// Under a radius budget a step is taken only if the new iterate stays
/// within the radius of `start` (at most [`STEP_CAP`] steps); under a step
/// budget exactly that many steps are taken.
pub fn global_optimize(start: &ModelState, sets: &[(&SyntheticSet, f64)], budget: Budget, lr: f64) -> Result<(ModelState, GlobalOutcome)> {
    if sets.is_empty() {
        return Err(Error::Config("no synthetic sets to optimize".into()));
    }
    let total: f64 = sets.iter().map(|s| s.1).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("aggregation weights sum to {total}")));
    }
    let mut w = start.clone();
    let mut outcome = GlobalOutcome::default();
    match budget {
        Budget::Radius(bound) => {
            if bound <= 0.0 {
                return Ok((w, outcome));
            }
            for _ in 0..STEP_CAP {
                let g = weighted_gradient(&w, sets)?;
                if g.norm() == 0.0 {
                    break;
                }
                let next = w.apply_step(&g, lr)?;
                let d = next.distance(start)?;
                if d > bound {
                    break;
                }
                outcome.distances.push(d);
                w = next;
            }
        }
        Budget::Steps(n) => {
            for _ in 0..n {
                let g = weighted_gradient(&w, sets)?;
                w = w.apply_step(&g, lr)?;
                outcome.distances.push(w.distance(start)?);
            }
        }
    }
    Ok((w, outcome))
}

#[derive(Clone, Debug)]
pub struct FedlapConfig {
    pub matching: MatchConfig,
    pub ipc: usize,
    /// Start each round from the previous synthetic set.
    pub warm_start: bool,
}

#[derive(Clone, Debug, Default)]
pub struct RoundReport {
    pub round: usize,
    pub learning_rate: f64,
    /// Radii reported by the clients, in id order.
    pub radii: Vec<f64>,
    pub budget: Option<Budget>,
    /// Distance from the round's start of each accepted server iterate.
    pub distances: Vec<f64>,
    /// Floats transferred this round.
    pub comm_floats: u64,
    pub data_accesses: usize,
    pub epsilon: Option<(f64, u32)>,
}

impl RoundReport {
    pub fn server_steps(&self) -> usize {
        self.distances.len()
    }
}

/// Real-data batches a client may draw per round: `while_cap * R_i`.
/// Independent of how often each batch's target is reused.
pub fn data_access_bound(cfg: &MatchConfig) -> usize {
    cfg.while_cap * cfg.r_i
}

fn run_clients(server: &ServerState, clients: &[ClientHandle], cfg: &FedlapConfig, mode: Mode) -> Result<Vec<ClientOutput>> {
    let m = server.round;
    clients
        .par_iter()
        .map(|c| {
            let init = match (&c.last_set, cfg.warm_start) {
                (Some(s), true) => s.clone(),
                _ => SyntheticSet::gaussian(
                    c.data.present_classes(),
                    cfg.ipc,
                    c.data.example_shape(),
                    cfg.matching.init_scale,
                    &mut c.rng(m, rng::tag::SYNTH_INIT),
                )?,
            };
            let mut r = c.rng(m, rng::tag::DATA);
            client_execute(&c.data, cfg.matching.radius, &server.model, &cfg.matching, mode, init, &mut r)
        })
        .collect()
}

fn finish_round(
    server: &ServerState,
    clients: &mut [ClientHandle],
    outputs: Vec<ClientOutput>,
    budget: Budget,
) -> Result<(ServerState, RoundReport)> {
    let weights = aggregation_weights(clients);
    let sets: Vec<(&SyntheticSet, f64)> = outputs.iter().map(|o| &o.set).zip(weights).collect();
    let lr = server.learning_rate();
    let (model, outcome) = global_optimize(&server.model, &sets, budget, lr)?;
    let report = RoundReport {
        round: server.round,
        learning_rate: lr,
        radii: outputs.iter().map(|o| o.radius).collect(),
        budget: Some(budget),
        distances: outcome.distances,
        comm_floats: outputs.iter().map(|o| o.set.payload_floats() as u64).sum(),
        data_accesses: outputs.iter().map(|o| o.data_accesses).sum(),
        epsilon: None,
    };
    for (c, o) in clients.iter_mut().zip(outputs) {
        c.last_set = Some(o.set);
    }
    Ok((server.advance(model), report))
}

/// One FedLAP round: every client approximates its loss around the
/// broadcast model, the server descends on the union of synthetic sets
/// within the budget chosen by its radius strategy.
pub fn fedlap_round(server: &ServerState, clients: &mut [ClientHandle], cfg: &FedlapConfig) -> Result<(ServerState, RoundReport)> {
    order_clients(clients)?;
    let outputs = run_clients(server, clients, cfg, Mode::Plain)?;
    let radii: Vec<f64> = outputs.iter().map(|o| o.radius).collect();
    let budget = select_radius(server.strategy, &radii)?;
    finish_round(server, clients, outputs, budget)
}

/// One FedLAP-DP round: clients match privatized gradients and report the
/// fixed radius; the accountant is charged one round.
pub fn fedlap_dp_round(
    server: &ServerState,
    clients: &mut [ClientHandle],
    cfg: &FedlapConfig,
    dp: &DpConfig,
    accountant: &AccountantState,
) -> Result<(ServerState, RoundReport, AccountantState)> {
    dp.validate()?;
    if accountant.steps_per_round != data_access_bound(&cfg.matching) {
        return Err(Error::Config(format!(
            "accountant charges {} accesses per round, the client loop allows {}",
            accountant.steps_per_round,
            data_access_bound(&cfg.matching)
        )));
    }
    if let Some(c) = clients.iter().find(|c| c.data.len() < dp.min_client_size) {
        return Err(Error::Config(format!(
            "client {} holds {} records, below dp.min_client_size = {}",
            c.id,
            c.data.len(),
            dp.min_client_size
        )));
    }
    order_clients(clients)?;
    let outputs = run_clients(server, clients, cfg, Mode::Private(dp))?;
    let budget = match server.strategy {
        RadiusStrategy::Fixed(n) => Budget::Steps(n),
        _ => Budget::Radius(cfg.matching.radius),
    };
    let (next, mut report) = finish_round(server, clients, outputs, budget)?;
    let accountant = accountant.accumulate_round();
    report.epsilon = Some(accountant.epsilon(dp.delta)?);
    Ok((next, report, accountant))
}
