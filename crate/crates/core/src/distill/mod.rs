//! Local approximation: synthetic sets whose gradients match a client's
//! real-data gradients inside a trust region around the broadcast model.

mod client;
mod matching;
mod synthetic;

pub use client::{client_execute, measure_radius, ClientOutput, Mode, TrajectoryLog};
pub use matching::{
    cosine_distance, magnitude_calibration, matching_loss, mse_only_loss, record_matching, Criterion, ZERO_NORM,
};
pub use synthetic::SyntheticSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::models::{LayerGrads, ModelState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Uniform without replacement, reshuffled each epoch.
    #[default]
    Shuffle,
    /// Independent inclusion of each record with probability `B / N_k`.
    Poisson,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMode {
    /// Turning point of the real loss along a descent path on the set.
    #[default]
    Measured,
    /// Report the server radius unchanged.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    /// Weight of the squared-error term.
    pub lambda: f64,
    /// Synthetic-feature learning rate.
    pub tau: f64,
    /// Model learning rate.
    pub eta: f64,
    pub r_i: usize,
    pub r_b: usize,
    pub r_l: usize,
    pub radius: f64,
    pub while_cap: usize,
    pub batch_size: usize,
    pub criterion: Criterion,
    /// Standard deviation of fresh synthetic features.
    pub init_scale: f64,
    /// Step budget of the radius measurement path.
    pub calibration_steps: usize,
    pub sampling: Sampling,
    pub radius_mode: RadiusMode,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self::plain()
    }
}

impl MatchConfig {
    /// `(R_i, R_l, R_b, r) = (1, 0, 5, 10)`.
    pub fn plain() -> Self {
        Self {
            lambda: 0.1,
            tau: 100.0,
            eta: 0.1,
            r_i: 1,
            r_b: 5,
            r_l: 0,
            radius: 10.0,
            while_cap: 5,
            batch_size: 32,
            criterion: Criterion::Combined,
            init_scale: 1.0,
            calibration_steps: 100,
            sampling: Sampling::Shuffle,
            radius_mode: RadiusMode::Measured,
        }
    }

    /// `(R_i, R_l, R_b, r) = (4, 2, 10, 1.5)`.
    pub fn private() -> Self {
        Self {
            r_i: 4,
            r_b: 10,
            r_l: 2,
            radius: 1.5,
            sampling: Sampling::Poisson,
            radius_mode: RadiusMode::Constant,
            ..Self::plain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lambda >= 0.0) {
            return bad("match.lambda must be non-negative");
        }
        if !(self.tau > 0.0) || !(self.eta > 0.0) {
            return bad("match.tau and match.eta must be positive");
        }
        if self.r_i == 0 || self.r_b == 0 {
            return bad("match.r_i and match.r_b must be at least 1");
        }
        if !(self.radius > 0.0) {
            return bad("match.radius must be positive");
        }
        if self.while_cap == 0 {
            return bad("match.while_cap must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("match.batch_size must be at least 1");
        }
        if !(self.init_scale > 0.0) {
            return bad("match.init_scale must be positive");
        }
        Ok(())
    }
}

/// Matching loss between `gd` and the gradient of `w` on `set`, as used
/// by [`synth_step`].
pub fn set_matching_loss(set: &SyntheticSet, w: &ModelState, gd: &LayerGrads, cfg: &MatchConfig) -> Result<f64> {
    let (_, gs) = w.loss_and_grad(set.features(), set.labels())?;
    gd.check_congruent(&gs)?;
    match cfg.criterion {
        Criterion::Combined => matching_loss(gd, &gs, cfg.lambda),
        Criterion::MseOnly => mse_only_loss(gd, &gs),
    }
}

/// `x <- x - tau * d/dx L_dis(gd, grad_w L(w, S))` with `gd` held fixed.
pub fn synth_step(set: &SyntheticSet, w: &ModelState, gd: &LayerGrads, cfg: &MatchConfig) -> Result<SyntheticSet> {
    let mut g = Graph::new();
    let params: Vec<_> = w.params().iter().map(|p| g.leaf(p.clone())).collect();
    let x = g.leaf(set.features().clone());
    let logits = w.spec().forward(&mut g, &params, x)?;
    let loss = g.softmax_cross_entropy(logits, set.labels().into())?;
    let gs = g.gradient(loss, &params, true)?;
    let dis = record_matching(&mut g, gd.tensors(), &gs, cfg.criterion, cfg.lambda)?;
    let meta = g.higher_gradient(dis, &[x])?.remove(0);
    if !meta.is_finite() {
        return Err(Error::NonFinite("synthetic-feature meta-gradient".into()));
    }
    let features = set.features().zip_map(&meta, |v, d| v - cfg.tau * d);
    set.with_features(features)
}
