use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Iid,
    DisjointClasses,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub clients: usize,
    pub seed: u64,
}

/// Splits `ds` into `spec.clients` disjoint shards whose union is `ds`.
///
/// `DisjointClasses` hands client `k` the classes `k*c/K .. (k+1)*c/K` in
/// dataset order; `Iid` shuffles and deals contiguous runs whose sizes
/// differ by at most one.
pub fn partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<Dataset>> {
    let k = spec.clients;
    if k == 0 {
        return Err(Error::Config("partition needs at least one client".into()));
    }
    if k > ds.len() {
        return Err(Error::Config(format!("{k} clients for {} examples", ds.len())));
    }
    let shards: Vec<Vec<usize>> = match spec.kind {
        PartitionKind::DisjointClasses => {
            if !ds.classes.is_multiple_of(k) {
                return Err(Error::Config(format!(
                    "{} classes cannot be split evenly over {k} clients",
                    ds.classes
                )));
            }
            let per = ds.classes / k;
            let mut shards = vec![Vec::new(); k];
            for (i, &l) in ds.labels.iter().enumerate() {
                shards[l / per].push(i);
            }
            shards
        }
        PartitionKind::Iid => {
            let mut idx: Vec<usize> = (0..ds.len()).collect();
            idx.shuffle(&mut rng::stream(spec.seed, &[rng::tag::PARTITION]));
            let (base, extra) = (ds.len() / k, ds.len() % k);
            let mut start = 0;
            (0..k)
                .map(|c| {
                    let len = base + usize::from(c < extra);
                    let s = idx[start..start + len].to_vec();
                    start += len;
                    s
                })
                .collect()
        }
    };
    shards
        .iter()
        .enumerate()
        .map(|(c, s)| {
            if s.is_empty() {
                return Err(Error::Config(format!("client {c} would receive no examples")));
            }
            let mut shard = ds.select(s);
            shard.name = format!("{}/client{c}", ds.name);
            Ok(shard)
        })
        .collect()
}
