use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PartitionKind;
use crate::distill::MatchConfig;
use crate::error::{Error, Result};
use crate::federation::RadiusStrategy;
use crate::privacy::DpConfig;

/// Environment variable naming the directory with the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "FEDLAP_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Blobs,
    MnistDesk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fedlap,
    FedlapDp,
    Fedavg,
    Fedsgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsConfig {
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub separation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistConfig {
    /// Falls back to `$FEDLAP_DATA_DIR`, then `data/mnist-desk`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub train_limit: usize,
    pub test_limit: usize,
    pub downsample: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub kind: PartitionKind,
    pub clients: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width of the MLP (blob task).
    pub hidden: usize,
    /// Channels of the ConvNet (image task).
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub method: Method,
    pub rounds: usize,
    pub seed: u64,
    pub ipc: usize,
    pub radius_strategy: RadiusStrategy,
    pub eval_every: usize,
    pub warm_start: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub blobs: BlobsConfig,
    pub mnist: MnistConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    /// `min_client_size = 0` means "smallest client shard".
    pub dp: DpConfig,
    pub fedavg: BaselineConfig,
    pub fedsgd: BaselineConfig,
}

impl ExperimentConfig {
    /// Defaults for `task` and `method`; the private method gets the
    /// private matching schedule.
    pub fn defaults(task: Task, method: Method) -> Self {
        let (clients, kind) = match task {
            Task::Blobs => (2, PartitionKind::DisjointClasses),
            Task::MnistDesk => (5, PartitionKind::DisjointClasses),
        };
        Self {
            task,
            method,
            rounds: match task {
                Task::Blobs => 30,
                Task::MnistDesk => 20,
            },
            seed: 0,
            ipc: 10,
            radius_strategy: RadiusStrategy::Min,
            eval_every: 1,
            warm_start: true,
            output: None,
            checkpoint: None,
            blobs: BlobsConfig {
                classes: 4,
                per_class: 100,
                test_per_class: 100,
                dim: 2,
                separation: 6.0,
            },
            mnist: MnistConfig {
                dir: None,
                train_limit: 1000,
                test_limit: 1000,
                downsample: 2,
            },
            partition: PartitionConfig { kind, clients },
            model: ModelConfig {
                hidden: 32,
                channels: 8,
            },
            matching: {
                let base = match method {
                    Method::FedlapDp => MatchConfig::private(),
                    _ => MatchConfig::plain(),
                };
                match task {
                    // low-dimensional blob coordinates diverge at the image-scale rate
                    Task::Blobs => MatchConfig { tau: 1.0, ..base },
                    Task::MnistDesk => MatchConfig { tau: 10.0, ..base },
                }
            },
            dp: DpConfig {
                min_client_size: 0,
                ..DpConfig::default()
            },
            fedavg: BaselineConfig {
                local_epochs: 5,
                batch_size: 32,
            },
            fedsgd: BaselineConfig {
                local_epochs: 1,
                batch_size: 32,
            },
        }
    }

    /// Parses flat TOML (dotted keys or sections) over the defaults for its
    /// `task` and `method`.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text)?;
        let pick = |key: &str| -> Result<Option<String>> {
            match user.get(key) {
                None => Ok(None),
                Some(toml::Value::String(s)) => Ok(Some(s.clone())),
                Some(v) => Err(Error::Config(format!("{key} must be a string, got {v}"))),
            }
        };
        let task: Task = match pick("task")? {
            Some(s) => parse_enum("task", &s, "blobs, mnist-desk")?,
            None => Task::Blobs,
        };
        let method: Method = match pick("method")? {
            Some(s) => parse_enum("method", &s, "fedlap, fedlap-dp, fedavg, fedsgd")?,
            None => return Err(Error::Config("missing required key `method`".into())),
        };
        let mut base = toml::Table::try_from(Self::defaults(task, method))
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        let cfg: Self = base.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.ipc == 0 {
            return bad("ipc must be at least 1".into());
        }
        if self.partition.clients == 0 {
            return bad("partition.clients must be at least 1".into());
        }
        match self.method {
            Method::Fedlap | Method::FedlapDp => self.matching.validate()?,
            Method::Fedavg if self.fedavg.local_epochs == 0 || self.fedavg.batch_size == 0 => {
                return bad("fedavg.local_epochs and fedavg.batch_size must be at least 1".into())
            }
            Method::Fedsgd if self.fedsgd.batch_size == 0 => return bad("fedsgd.batch_size must be at least 1".into()),
            _ => {}
        }
        if self.method == Method::FedlapDp {
            let mut dp = self.dp.clone();
            if dp.min_client_size == 0 {
                dp.min_client_size = dp.batch.max(1);
            }
            dp.validate()?;
        }
        Ok(())
    }

    /// The dataset directory for the image task.
    pub fn data_dir(&self) -> PathBuf {
        self.mnist
            .dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data/mnist-desk"))
    }
}

fn parse_enum<T: for<'de> Deserialize<'de>>(key: &str, value: &str, allowed: &str) -> Result<T> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(value))
        .map_err(|_| Error::Config(format!("unknown {key} {value:?} (expected one of: {allowed})")))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_override_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "method = \"fedlap\"\nrounds = 3\nmatch.r_b = 2\npartition.clients = 4\nradius_strategy = \"fixed:100\"\n",
        )
        .unwrap();
        assert_eq!(cfg.rounds, 3);
        assert_eq!(cfg.matching.r_b, 2);
        assert_eq!(cfg.matching.lambda, 0.1);
        assert_eq!(cfg.partition.clients, 4);
        assert_eq!(cfg.radius_strategy, RadiusStrategy::Fixed(100));
    }

    #[test]
    fn private_method_gets_private_schedule() {
        let cfg = ExperimentConfig::from_toml("method = \"fedlap-dp\"").unwrap();
        assert_eq!((cfg.matching.r_i, cfg.matching.r_l, cfg.matching.r_b), (4, 2, 10));
        assert_eq!(cfg.matching.radius, 1.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("method = \"fedavg\"\nmatch.bogus = 1").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!(ExperimentConfig::from_toml("method = \"fedprox\"").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::defaults(Task::MnistDesk, Method::FedlapDp);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
