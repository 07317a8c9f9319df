use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{aggregation_weights, order_clients, ClientHandle, RoundReport, ServerState};
use crate::error::{Error, Result};
use crate::models::{LayerGrads, ModelState};
use crate::rng;

fn baseline_report(server: &ServerState, clients: &[ClientHandle]) -> RoundReport {
    let params = server.model.num_params() as u64;
    RoundReport {
        round: server.round,
        learning_rate: server.learning_rate(),
        comm_floats: 2 * params * clients.len() as u64,
        ..RoundReport::default()
    }
}

/// FedAvg: `local_epochs` epochs of shuffled mini-batch descent per client
/// from the broadcast model, then `N_k / N`-weighted parameter averaging.
pub fn fedavg_round(
    server: &ServerState,
    clients: &mut [ClientHandle],
    local_epochs: usize,
    batch_size: usize,
) -> Result<(ServerState, RoundReport)> {
    if local_epochs == 0 || batch_size == 0 {
        return Err(Error::Config("fedavg needs local_epochs >= 1 and batch_size >= 1".into()));
    }
    order_clients(clients)?;
    let lr = server.learning_rate();
    let m = server.round;
    let locals = clients
        .par_iter()
        .map(|c| {
            let mut r = c.rng(m, rng::tag::DATA);
            let mut w = server.model.clone();
            let mut order: Vec<usize> = (0..c.data.len()).collect();
            for _ in 0..local_epochs {
                order.shuffle(&mut r);
                for chunk in order.chunks(batch_size) {
                    let b = c.data.select(chunk);
                    let (_, g) = w.loss_and_grad(&b.features, &b.labels)?;
                    w = w.apply_step(&g, lr)?;
                }
            }
            Ok(w)
        })
        .collect::<Result<Vec<ModelState>>>()?;
    let weights = aggregation_weights(clients);
    let pairs: Vec<(&ModelState, f64)> = locals.iter().zip(weights).collect();
    let averaged = ModelState::weighted_average(&pairs)?;
    let report = baseline_report(server, clients);
    Ok((server.advance(averaged), report))
}

/// FedSGD: one mini-batch gradient per client, `N_k / N`-weighted, one
/// server step. A client whose data fits in one batch uses all of it.
pub fn fedsgd_round(server: &ServerState, clients: &mut [ClientHandle], batch_size: usize) -> Result<(ServerState, RoundReport)> {
    if batch_size == 0 {
        return Err(Error::Config("fedsgd needs batch_size >= 1".into()));
    }
    order_clients(clients)?;
    let m = server.round;
    let grads = clients
        .par_iter()
        .map(|c| {
            let n = c.data.len();
            let (_, g) = if batch_size >= n {
                server.model.loss_and_grad(&c.data.features, &c.data.labels)?
            } else {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut c.rng(m, rng::tag::DATA));
                let b = c.data.select(&order[..batch_size]);
                server.model.loss_and_grad(&b.features, &b.labels)?
            };
            Ok(g)
        })
        .collect::<Result<Vec<LayerGrads>>>()?;
    let weights = aggregation_weights(clients);
    let mut acc = grads[0].scale(weights[0]);
    for (g, w) in grads.iter().zip(&weights).skip(1) {
        acc.accumulate(&g.scale(*w));
    }
    let model = server.model.apply_step(&acc, server.learning_rate())?;
    let report = baseline_report(server, clients);
    Ok((server.advance(model), report))
}
