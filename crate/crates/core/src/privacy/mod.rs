//! Record-level differential privacy: clipping, the Gaussian mechanism and
//! a Rényi-DP accountant for the subsampled Gaussian mechanism.

mod accountant;
pub mod quadrature;

pub use accountant::{rdp_sgm, rdp_to_dp, AccountantState, ORDERS};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::LayerGrads;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    /// Noise multiplier.
    pub sigma: f64,
    /// L2 clipping bound on each per-example gradient.
    pub clip: f64,
    /// Expected batch size.
    pub batch: usize,
    pub delta: f64,
    /// Per-round client selection probability.
    pub client_rate: f64,
    /// Smallest client dataset size.
    pub min_client_size: usize,
    /// Test switch: when false the Gaussian draw is skipped.
    #[serde(default = "yes")]
    pub noise_enabled: bool,
}

fn yes() -> bool {
    true
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            clip: 1.0,
            batch: 16,
            delta: 1e-5,
            client_rate: 1.0,
            min_client_size: 100,
            noise_enabled: true,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.sigma > 0.0) {
            return bad(format!("dp.sigma must be positive, got {}", self.sigma));
        }
        if !(self.clip > 0.0) {
            return bad(format!("dp.clip must be positive, got {}", self.clip));
        }
        if self.batch == 0 || self.batch > self.min_client_size {
            return bad(format!(
                "dp.batch must be in 1..={} (dp.min_client_size), got {}",
                self.min_client_size, self.batch
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("dp.delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.client_rate > 0.0 && self.client_rate <= 1.0) {
            return bad(format!("dp.client_rate must lie in (0, 1], got {}", self.client_rate));
        }
        Ok(())
    }

    /// Sampling rate of the first batch in a round, `client_rate * B / min|D_k|`.
    pub fn q1(&self) -> f64 {
        self.client_rate * self.q2()
    }

    /// Sampling rate of later batches in a round, `B / min|D_k|`.
    pub fn q2(&self) -> f64 {
        self.batch as f64 / self.min_client_size as f64
    }
}

/// `g * min(1, C / ||g||)` over the whole flattened gradient. Norms within
/// a few ulps of `C` count as inside, which keeps clipping idempotent.
pub fn clip(g: &LayerGrads, c: f64) -> LayerGrads {
    let norm = g.norm();
    if norm <= c * (1.0 + 4.0 * f64::EPSILON) {
        g.clone()
    } else {
        g.scale(c / norm)
    }
}

/// `(sum_i clip(g_i, C) + z) / B` with one draw `z ~ N(0, sigma^2 C^2 I)`
/// and `B` the realized batch size.
pub fn privatize(per_example: &[LayerGrads], cfg: &DpConfig, rng: &mut Rng) -> Result<LayerGrads> {
    let first = per_example.first().ok_or(Error::EmptyBatch)?;
    let mut acc = clip(first, cfg.clip);
    for g in &per_example[1..] {
        acc.check_congruent(g)?;
        acc.accumulate(&clip(g, cfg.clip));
    }
    add_noise(&mut acc, cfg, rng);
    Ok(acc.scale_div(per_example.len() as f64))
}

/// Noise on an empty sum, divided by the nominal batch size.
pub(crate) fn privatize_empty(template: &LayerGrads, cfg: &DpConfig, rng: &mut Rng) -> LayerGrads {
    let mut acc = template.scale(0.0);
    add_noise(&mut acc, cfg, rng);
    acc.scale_div(cfg.batch as f64)
}

fn add_noise(acc: &mut LayerGrads, cfg: &DpConfig, rng: &mut Rng) {
    if !cfg.noise_enabled {
        return;
    }
    let std = cfg.sigma * cfg.clip;
    for t in acc.tensors_mut() {
        for v in t.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += std * z;
        }
    }
}
