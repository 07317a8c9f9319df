use super::DpConfig;
use crate::error::{Error, Result};

/// Rényi orders tracked by the accountant.
pub const ORDERS: std::ops::RangeInclusive<u32> = 2..=64;

/// RDP of the sampled Gaussian mechanism at integer order `alpha`:
/// `ln A / (alpha - 1)` with
/// `A = sum_k C(alpha, k) (1-q)^(alpha-k) q^k exp((k^2 - k) / (2 sigma^2))`.
///
/// Since the binomial weights sum to one, `A - 1` is the sum of the same
/// weights times `expm1((k^2 - k) / (2 sigma^2))` over `k >= 2`, a sum of
/// positive terms that is accumulated in log space.
pub fn rdp_sgm(q: f64, sigma: f64, alpha: u32) -> Result<f64> {
    if alpha < 2 {
        return Err(Error::Config(format!("Rényi order must be at least 2, got {alpha}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("sampling rate must lie in [0, 1], got {q}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("noise multiplier must be positive, got {sigma}")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    let a = f64::from(alpha);
    let (ln_q, ln_1mq) = (q.ln(), (-q).ln_1p());
    let mut ln_binom = a.ln();
    let mut terms = Vec::with_capacity(alpha as usize);
    for k in 2..=alpha {
        let kf = f64::from(k);
        ln_binom += (a - kf + 1.0).ln() - kf.ln();
        let x = (kf * kf - kf) / (2.0 * sigma * sigma);
        let ln_expm1 = x + (-(-x).exp_m1()).ln();
        let mut t = ln_binom + kf * ln_q + ln_expm1;
        if k < alpha {
            t += (a - kf) * ln_1mq;
        }
        terms.push(t);
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ln_a_minus_1 = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    let ln_a = ln_a_minus_1.max(0.0) + (-ln_a_minus_1.abs()).exp().ln_1p();
    Ok(ln_a / (a - 1.0))
}

/// Best `(epsilon, alpha)` over the orders for RDP values `rho`:
/// `eps = rho + ln((a-1)/a) - (ln delta + ln a) / (a-1)`.
pub fn rdp_to_dp(orders: &[u32], rho: &[f64], delta: f64) -> Result<(f64, u32)> {
    if orders.is_empty() || orders.len() != rho.len() {
        return Err(Error::Config("empty or mismatched Rényi order grid".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    let mut best = (f64::INFINITY, orders[0]);
    for (&alpha, &r) in orders.iter().zip(rho) {
        let a = f64::from(alpha);
        let eps = r + ((a - 1.0) / a).ln() - (delta.ln() + a.ln()) / (a - 1.0);
        if eps < best.0 {
            best = (eps, alpha);
        }
    }
    Ok(best)
}

/// Accumulated privacy cost of FedLAP-DP rounds over the order grid.
///
/// Each round charges `xi(q1) + (T - 1) xi(q2)` per order, where `T` counts
/// the real-data accesses in a round.
#[derive(Clone, Debug, PartialEq)]
pub struct AccountantState {
    pub sigma: f64,
    pub q1: f64,
    pub q2: f64,
    /// Data accesses per round.
    pub steps_per_round: usize,
    /// Rounds accumulated so far.
    pub rounds: usize,
    orders: Vec<u32>,
    per_round: Vec<f64>,
}

impl AccountantState {
    /// The inputs are the DP configuration and the per-round access count
    /// only: nothing about how often a privatized gradient is reused.
    pub fn new(dp: &DpConfig, steps_per_round: usize) -> Result<Self> {
        dp.validate()?;
        Self::from_rates(dp.sigma, dp.q1(), dp.q2(), steps_per_round)
    }

    pub fn from_rates(sigma: f64, q1: f64, q2: f64, steps_per_round: usize) -> Result<Self> {
        if steps_per_round == 0 {
            return Err(Error::Config("at least one data access per round is required".into()));
        }
        let orders: Vec<u32> = ORDERS.collect();
        let per_round = orders
            .iter()
            .map(|&a| Ok(rdp_sgm(q1, sigma, a)? + (steps_per_round - 1) as f64 * rdp_sgm(q2, sigma, a)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sigma,
            q1,
            q2,
            steps_per_round,
            rounds: 0,
            orders,
            per_round,
        })
    }

    pub fn accumulate_round(&self) -> Self {
        Self {
            rounds: self.rounds + 1,
            ..self.clone()
        }
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    /// Cost charged by one round, per order.
    pub fn per_round(&self) -> &[f64] {
        &self.per_round
    }

    /// Accumulated RDP per order: `rounds * per_round`.
    pub fn rho(&self) -> Vec<f64> {
        self.per_round.iter().map(|r| self.rounds as f64 * r).collect()
    }

    pub fn epsilon(&self, delta: f64) -> Result<(f64, u32)> {
        rdp_to_dp(&self.orders, &self.rho(), delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_sampling_is_plain_gaussian() {
        for alpha in [2, 5, 17] {
            let want = f64::from(alpha) / 2.0;
            assert!((rdp_sgm(1.0, 1.0, alpha).unwrap() - want).abs() < 1e-9 * want);
        }
    }

    #[test]
    fn order_below_two_is_rejected() {
        assert!(rdp_sgm(0.1, 1.0, 1).is_err());
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(rdp_to_dp(&[], &[], 1e-5).is_err());
    }
}
