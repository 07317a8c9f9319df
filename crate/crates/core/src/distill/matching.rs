use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::LayerGrads;
use crate::tensor::Tensor;

/// Row norms below this count as zero.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Layer-wise cosine distance plus `lambda` times squared error.
    #[default]
    Combined,
    MseOnly,
}

fn view_2d(shape: &[usize]) -> [usize; 2] {
    match shape {
        [] => [1, 1],
        [n] => [*n, 1],
        [n, rest @ ..] => [*n, rest.iter().product()],
    }
}

/// Records the matching loss between fixed target gradients `target` and
/// recorded gradients `current` (one per parameter tensor).
///
/// In the cosine term a row where both vectors vanish contributes 0, a row
/// where only one vanishes contributes 1; neither carries gradient.
pub fn record_matching(
    g: &mut Graph,
    target: &[Tensor],
    current: &[Var],
    criterion: Criterion,
    lambda: f64,
) -> Result<Var> {
    if target.len() != current.len() {
        return Err(Error::Layout(format!(
            "{} target tensors against {} gradients",
            target.len(),
            current.len()
        )));
    }
    let mut total: Option<Var> = None;
    let mut constant = 0.0;
    for (t, &c) in target.iter().zip(current) {
        if t.shape() != g.shape(c) {
            return Err(Error::Layout(format!(
                "gradient shapes {:?} and {:?} differ",
                t.shape(),
                g.shape(c)
            )));
        }
        let [n, m] = view_2d(t.shape());
        let d = g.constant(t.reshape(&[n, m])?);
        let s = g.reshape(c, &[n, m])?;
        let mut terms = Vec::new();
        if criterion == Criterion::Combined {
            let (valid, one_sided) = classify_rows(g.value(d), g.value(s));
            constant += (valid.len() + one_sided) as f64;
            if !valid.is_empty() {
                let idx: Arc<[usize]> = valid.into();
                let dv = g.select_rows(d, idx.clone())?;
                let sv = g.select_rows(s, idx)?;
                let ds = g.mul(dv, sv)?;
                let dots = g.row_sum(ds)?;
                let dd = g.mul(dv, dv)?;
                let dd = g.row_sum(dd)?;
                let ss = g.mul(sv, sv)?;
                let ss = g.row_sum(ss)?;
                let prod = g.mul(dd, ss)?;
                let denom = g.sqrt(prod)?;
                let cos = g.div(dots, denom)?;
                let sum = g.sum(cos)?;
                terms.push(g.scale(sum, -1.0)?);
            }
        }
        let weight = match criterion {
            Criterion::Combined => lambda,
            Criterion::MseOnly => 1.0,
        };
        if weight != 0.0 {
            let diff = g.sub(s, d)?;
            let sq = g.dot(diff, diff)?;
            terms.push(g.scale(sq, weight)?);
        }
        for term in terms {
            total = Some(match total {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
    }
    let offset = g.constant(Tensor::scalar(constant));
    match total {
        Some(t) => g.add(offset, t),
        None => Ok(offset),
    }
}

/// Indices of rows where both norms are nonzero, and the number of rows
/// where exactly one is.
fn classify_rows(a: &Tensor, b: &Tensor) -> (Vec<usize>, usize) {
    let m = a.shape()[1];
    let mut valid = Vec::new();
    let mut one_sided = 0;
    for (i, (ra, rb)) in a.data().chunks_exact(m).zip(b.data().chunks_exact(m)).enumerate() {
        let na = ra.iter().map(|v| v * v).sum::<f64>().sqrt() < ZERO_NORM;
        let nb = rb.iter().map(|v| v * v).sum::<f64>().sqrt() < ZERO_NORM;
        match (na, nb) {
            (false, false) => valid.push(i),
            (true, true) => {}
            _ => one_sided += 1,
        }
    }
    (valid, one_sided)
}

fn evaluate(target: &[Tensor], current: &[Tensor], criterion: Criterion, lambda: f64) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = current.iter().map(|t| g.constant(t.clone())).collect();
    let out = record_matching(&mut g, target, &vars, criterion, lambda)?;
    Ok(g.value(out).item())
}

/// `sum_i (1 - a_i . b_i / (|a_i| |b_i|))` over the rows of the 2-D views.
pub fn cosine_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    evaluate(std::slice::from_ref(a), std::slice::from_ref(b), Criterion::Combined, 0.0)
}

/// `sum_l [cos_dist(gd_l, gs_l) + lambda |gd_l - gs_l|^2]`.
pub fn matching_loss(gd: &LayerGrads, gs: &LayerGrads, lambda: f64) -> Result<f64> {
    gd.check_congruent(gs)?;
    evaluate(gd.tensors(), gs.tensors(), Criterion::Combined, lambda)
}

/// `sum_l |gd_l - gs_l|^2`.
pub fn mse_only_loss(gd: &LayerGrads, gs: &LayerGrads) -> Result<f64> {
    gd.check_congruent(gs)?;
    evaluate(gd.tensors(), gs.tensors(), Criterion::MseOnly, 0.0)
}

/// Rescales each gradient tensor to the matching norm in `real_norms`.
pub fn magnitude_calibration(gs: &LayerGrads, real_norms: &[f64]) -> Result<LayerGrads> {
    if real_norms.len() != gs.len() {
        return Err(Error::Layout(format!(
            "{} norms for {} gradient tensors",
            real_norms.len(),
            gs.len()
        )));
    }
    let tensors = gs
        .tensors()
        .iter()
        .zip(real_norms)
        .enumerate()
        .map(|(l, (t, &target))| {
            if !(target > 0.0) {
                return Err(Error::Config(format!("target norm {target} for tensor {l}")));
            }
            let norm = t.norm();
            if norm < ZERO_NORM {
                return Err(Error::ZeroNorm(l));
            }
            Ok(t.scale(target / norm))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerGrads::new(tensors))
}
