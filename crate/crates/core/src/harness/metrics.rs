use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::random::PRNG_NAME;

use super::config::RunConfig;

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    /// Mean loss on the minibatch, before the update.
    pub loss: f64,
    pub eta: f64,
    /// `‖G‖_F` of the probed layer.
    pub grad_norm: f64,
    /// Stable rank of the probed layer's gradient; absent for a zero gradient.
    pub stable_rank: Option<f64>,
    /// Subspace refreshes so far, summed over layers.
    pub refreshes: u64,
    /// Optimizer state entries across layers.
    pub optimizer_state_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean loss over the full dataset after the last step.
    pub final_loss: f64,
    /// Full-dataset loss before the first step.
    pub initial_loss: f64,
    /// Classification accuracy on the dataset; absent for regression.
    pub final_accuracy: Option<f64>,
    pub steps: u64,
    pub refreshes: u64,
    /// Largest gradient buffer alive at once, in entries.
    pub peak_grad_entries: usize,
    /// Optimizer state entries across layers.
    pub state_entries: usize,
    pub parameter_count: usize,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub prng: String,
    pub seed: u64,
    pub crate_version: String,
    pub config: RunConfig,
}

impl RunMeta {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            prng: PRNG_NAME.into(),
            seed: cfg.seed,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
        }
    }
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[MetricRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricRecord>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}
