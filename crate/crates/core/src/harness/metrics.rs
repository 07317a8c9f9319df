use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One evaluation, as written to the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    /// Floats transferred so far.
    pub comm_cost: u64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Global radius used this round; empty without a radius budget.
    pub radius: Option<f64>,
    pub epsilon: Option<f64>,
    pub alpha: Option<u32>,
}

pub const HEADER: [&str; 7] = [
    "round",
    "comm_cost",
    "test_accuracy",
    "test_loss",
    "radius",
    "epsilon",
    "alpha",
];

/// Writes rows as they arrive, flushing after each so the file can be read
/// mid-run.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        inner.write_record(HEADER)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?)
}
