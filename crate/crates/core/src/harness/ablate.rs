use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::{parse_json, RunConfig, SwitchFreq};
use super::train::run_train;

/// A grid of runs sharing one base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub base: RunConfig,
    pub ranks: Vec<usize>,
    pub switch_freqs: Vec<SwitchFreq>,
    pub seeds: Vec<u64>,
    /// Learning rates to sweep; defaults to the base rate.
    #[serde(default)]
    pub etas: Vec<f64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellStatus {
    Ok,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub rank: usize,
    pub switch_freq: String,
    pub seed: u64,
    pub eta: f64,
    pub status: CellStatus,
    pub final_loss: Option<f64>,
    pub refreshes: Option<u64>,
    pub message: String,
}

impl AblateConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: AblateConfig = parse_json(text)?;
        if cfg.ranks.is_empty() || cfg.switch_freqs.is_empty() || cfg.seeds.is_empty() {
            return Err(Error::config("ranks", "ranks, switch_freqs and seeds must be non-empty"));
        }
        let mut probe = cfg.base.clone();
        probe.rank = Some(cfg.ranks[0]);
        probe.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The run config for every cell, in row order.
    pub fn cells(&self) -> Vec<RunConfig> {
        let etas = if self.etas.is_empty() {
            vec![self.base.eta]
        } else {
            self.etas.clone()
        };
        let mut out = Vec::new();
        for &rank in &self.ranks {
            for &t in &self.switch_freqs {
                for &eta in &etas {
                    for &seed in &self.seeds {
                        out.push(RunConfig {
                            rank: Some(rank),
                            switch_freq: t,
                            eta,
                            seed,
                            out_dir: None,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

/// Runs every cell. A failing cell is recorded and the sweep continues.
pub fn run_ablation(cfg: &AblateConfig) -> Vec<AblationRow> {
    cfg.cells()
        .into_iter()
        .map(|cell| {
            let mut row = AblationRow {
                rank: cell.rank.unwrap_or(0),
                switch_freq: cell.switch_freq.label(),
                seed: cell.seed,
                eta: cell.eta,
                status: CellStatus::Ok,
                final_loss: None,
                refreshes: None,
                message: String::new(),
            };
            match run_train(&cell) {
                Ok(out) => {
                    row.final_loss = Some(out.summary.final_loss);
                    row.refreshes = Some(out.summary.refreshes);
                }
                Err(e) => {
                    log::warn!("cell rank={} T={} seed={} failed: {e}", row.rank, row.switch_freq, row.seed);
                    row.status = match e {
                        Error::Divergence { .. } => CellStatus::Diverged,
                        _ => CellStatus::Failed,
                    };
                    row.message = e.to_string();
                }
            }
            row
        })
        .collect()
}

pub fn write_ablation_csv<W: Write>(out: W, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
