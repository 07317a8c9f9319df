use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{synth_step, MatchConfig, RadiusMode, Sampling, SyntheticSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{LayerGrads, ModelState};
use crate::privacy::{self, DpConfig};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug)]
pub enum Mode<'a> {
    Plain,
    Private(&'a DpConfig),
}

/// `(distance from the starting weights, real-data loss)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    pub entries: Vec<(f64, f64)>,
}

impl TrajectoryLog {
    pub fn push(&mut self, distance: f64, loss: f64) {
        self.entries.push((distance, loss));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.0)
    }
}

/// Distance at the smallest loss, ties going to the larger distance.
/// An empty log gives 0.
pub fn measure_radius(log: &TrajectoryLog) -> f64 {
    let mut best = (0.0, f64::INFINITY);
    for &(d, l) in &log.entries {
        if l < best.1 || (l == best.1 && d > best.0) {
            best = (d, l);
        }
    }
    best.0
}

#[derive(Clone, Debug)]
pub struct ClientOutput {
    pub set: SyntheticSet,
    /// Reported trust-region radius `r_k`.
    pub radius: f64,
    /// Model iterates at while-loop entry, with the sampled batch's loss.
    pub synthesis: TrajectoryLog,
    /// Descent path on the final set used to measure the radius.
    pub calibration: TrajectoryLog,
    /// Real batches drawn.
    pub data_accesses: usize,
}

struct Sampler {
    sampling: Sampling,
    batch: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(sampling: Sampling, batch: usize, n: usize) -> Self {
        Self {
            sampling,
            batch: batch.min(n),
            order: (0..n).collect(),
            cursor: n,
        }
    }

    fn next(&mut self, rng: &mut Rng) -> Vec<usize> {
        let n = self.order.len();
        match self.sampling {
            Sampling::Shuffle => {
                if self.cursor + self.batch > n {
                    self.order.shuffle(rng);
                    self.cursor = 0;
                }
                let b = self.order[self.cursor..self.cursor + self.batch].to_vec();
                self.cursor += self.batch;
                b
            }
            Sampling::Poisson => {
                let q = self.batch as f64 / n as f64;
                (0..n).filter(|_| rng.random::<f64>() < q).collect()
            }
        }
    }
}

fn target_gradient(
    w: &ModelState,
    data: &Dataset,
    batch: &[usize],
    mode: Mode,
    rng: &mut Rng,
) -> Result<LayerGrads> {
    if batch.is_empty() {
        return Ok(match mode {
            Mode::Plain => LayerGrads::zeros_like(w),
            Mode::Private(dp) => privacy::privatize_empty(&LayerGrads::zeros_like(w), dp, rng),
        });
    }
    let b = data.select(batch);
    let per_example = w.per_example_grads(&b.features, &b.labels)?;
    match mode {
        Mode::Plain => LayerGrads::mean_of(&per_example, per_example.len() as f64),
        Mode::Private(dp) => privacy::privatize(&per_example, dp, rng),
    }
}

/// One client's local approximation for a round.
///
/// Runs `r_i` passes from `w_init`; each pass repeats (sample a real batch,
/// form its target gradient, `r_b` synthetic updates, `r_l` model steps on
/// the set) while the model stays strictly within `radius` of `w_init` and
/// fewer than `while_cap` iterations have run.
pub fn client_execute(
    data: &Dataset,
    radius: f64,
    w_init: &ModelState,
    cfg: &MatchConfig,
    mode: Mode,
    init: SyntheticSet,
    rng: &mut Rng,
) -> Result<ClientOutput> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("radius must be positive, got {radius}")));
    }
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let batch = match mode {
        Mode::Plain => cfg.batch_size,
        Mode::Private(dp) => dp.batch,
    };
    let sampling = match mode {
        Mode::Plain => cfg.sampling,
        Mode::Private(_) => Sampling::Poisson,
    };
    let mut sampler = Sampler::new(sampling, batch, data.len());
    let mut set = init;
    let mut synthesis = TrajectoryLog::default();
    let mut data_accesses = 0;

    for _ in 0..cfg.r_i {
        let mut w = w_init.clone();
        let mut iterations = 0;
        loop {
            let distance = w.distance(w_init)?;
            if distance >= radius || iterations >= cfg.while_cap {
                break;
            }
            iterations += 1;
            let idx = sampler.next(rng);
            data_accesses += 1;
            let gd = target_gradient(&w, data, &idx, mode, rng)?;
            let batch_loss = if idx.is_empty() {
                f64::NAN
            } else {
                let b = data.select(&idx);
                w.loss(&b.features, &b.labels)?
            };
            synthesis.push(distance, batch_loss);
            for _ in 0..cfg.r_b {
                set = synth_step(&set, &w, &gd, cfg)?;
            }
            for _ in 0..cfg.r_l {
                let (_, gs) = w.loss_and_grad(set.features(), set.labels())?;
                w = w.apply_step(&gs, cfg.eta)?;
            }
        }
    }

    let (radius_k, calibration) = match (mode, cfg.radius_mode) {
        (Mode::Plain, RadiusMode::Measured) => {
            let log = calibrate(data, radius, w_init, &set, cfg)?;
            (measure_radius(&log), log)
        }
        _ => (radius, TrajectoryLog::default()),
    };
    Ok(ClientOutput {
        set,
        radius: radius_k,
        synthesis,
        calibration,
        data_accesses,
    })
}

/// Full-batch descent on `set` from `w_init`, logging the real loss, until
/// the next iterate would reach `radius` or the step budget runs out.
fn calibrate(data: &Dataset, radius: f64, w_init: &ModelState, set: &SyntheticSet, cfg: &MatchConfig) -> Result<TrajectoryLog> {
    let mut log = TrajectoryLog::default();
    log.push(0.0, w_init.loss(&data.features, &data.labels)?);
    let mut w = w_init.clone();
    for _ in 0..cfg.calibration_steps {
        let (_, gs) = w.loss_and_grad(set.features(), set.labels())?;
        let next = w.apply_step(&gs, cfg.eta)?;
        let distance = next.distance(w_init)?;
        if distance >= radius {
            break;
        }
        log.push(distance, next.loss(&data.features, &data.labels)?);
        w = next;
    }
    Ok(log)
}
