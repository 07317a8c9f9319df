//! Experiment runner: configuration, the round loop, metrics, the
//! accountant front end and a quick invariant self-test.

mod config;
mod metrics;
mod run;
mod selftest;

pub use config::{
    BaselineConfig, BlobsConfig, ExperimentConfig, Method, MnistConfig, ModelConfig, PartitionConfig, Task,
    DATA_DIR_ENV,
};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, HEADER};
pub use run::{prepare, resolved_dp, run, run_prepared, Experiment, RunOutput};
pub use selftest::{selftest, Check};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::privacy::{AccountantState, DpConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct AccountantQuery {
    pub sigma: f64,
    pub batch: usize,
    pub min_client_size: usize,
    pub client_rate: f64,
    pub rounds: usize,
    /// Data accesses per round.
    pub local_updates: usize,
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AccountantAnswer {
    pub epsilon: f64,
    pub alpha: u32,
}

/// `(epsilon, alpha)` after `rounds` rounds of `local_updates` accesses.
pub fn accountant_cli(q: &AccountantQuery) -> Result<AccountantAnswer> {
    if q.batch == 0 {
        return Err(Error::Config("batch must be at least 1".into()));
    }
    if q.client_rate == 0.0 {
        return Err(Error::Config("client_rate must be positive".into()));
    }
    let dp = DpConfig {
        sigma: q.sigma,
        clip: 1.0,
        batch: q.batch,
        delta: q.delta,
        client_rate: q.client_rate,
        min_client_size: q.min_client_size,
        noise_enabled: true,
    };
    let mut acc = AccountantState::new(&dp, q.local_updates)?;
    for _ in 0..q.rounds {
        acc = acc.accumulate_round();
    }
    let (epsilon, alpha) = acc.epsilon(q.delta)?;
    Ok(AccountantAnswer { epsilon, alpha })
}
