use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{stable_rank, Matrix};
use crate::models::ReversibleNet;
use crate::optim::{
    AdamState, GaLoreConfig, GaLoreOptimState, InnerKind, LayerOptimizer, LoraState,
};

use super::config::{OptimizerKind, Rho, RunConfig, Task};
use super::metrics::{write_json, write_jsonl, MetricRecord, RunMeta, Summary};
use super::tasks::{accuracy, build_problem, Batcher, Streams};

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<MetricRecord>,
    pub summary: Summary,
    pub net: ReversibleNet,
}

impl TrainOutcome {
    /// Writes `metrics.jsonl`, `summary.json` and `run_meta.json`.
    pub fn write(&self, cfg: &RunConfig, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let file = std::fs::File::create(dir.join("metrics.jsonl"))?;
        write_jsonl(std::io::BufWriter::new(file), &self.records)?;
        write_json(&dir.join("summary.json"), &self.summary)?;
        write_json(&dir.join("run_meta.json"), &RunMeta::new(cfg))
    }
}

/// Optimizer for layer `l`. With `head_full_rank`, the output layer of a
/// multi-layer network keeps plain Adam under the low-rank methods.
pub fn layer_optimizer(
    cfg: &RunConfig,
    l: usize,
    w: &Matrix,
    streams: &mut Streams,
) -> Result<LayerOptimizer> {
    let (rows, cols) = w.shape();
    let is_head = cfg.depth() > 1 && l + 1 == cfg.depth();
    let low_rank = cfg.optimizer.needs_rank();
    if low_rank && is_head && cfg.head_full_rank {
        return Ok(LayerOptimizer::Adam(AdamState::new(rows, cols, cfg.adam)?));
    }
    let rank = cfg.rank.unwrap_or(0);
    let inner = match (cfg.optimizer, cfg.rho) {
        (_, Rho::Identity) => InnerKind::Identity,
        (OptimizerKind::GaloreAdafactor, _) => InnerKind::Adafactor,
        (OptimizerKind::GaloreAdam8bit, _) => InnerKind::Adam8bit,
        _ => InnerKind::Adam,
    };
    Ok(match cfg.optimizer {
        OptimizerKind::Sgd => LayerOptimizer::Sgd,
        OptimizerKind::Adam => LayerOptimizer::Adam(AdamState::new(rows, cols, cfg.adam)?),
        OptimizerKind::LoraAdam => LayerOptimizer::Lora(LoraState::new(
            w.clone(),
            rank,
            cfg.lora_alpha,
            cfg.adam,
            &mut streams.adaptor,
        )?),
        OptimizerKind::GaloreAdam | OptimizerKind::GaloreAdafactor | OptimizerKind::GaloreAdam8bit => {
            let gcfg = GaLoreConfig {
                switch_freq: cfg.switch_freq.period(),
                alpha: cfg.alpha,
                inner,
                policy: cfg.switch_policy,
                adam: cfg.adam,
                block_size: cfg.block_size,
                ..GaLoreConfig::new(rank)
            };
            LayerOptimizer::GaLore(GaLoreOptimState::new(rows, cols, &gcfg)?)
        }
    })
}

fn probe(g: &Matrix) -> (f64, Option<f64>) {
    (g.fro_norm(), stable_rank(g).ok())
}

fn check_finite(step: u64, loss: f64, last: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step, last_loss: last })
    }
}

/// Runs one training job end to end. Deterministic for a given config.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut streams = Streams::new(cfg.seed);
    let problem = build_problem(cfg, &mut streams)?;
    let data = problem.data;
    let mut net = problem.student;
    let mut opts = net
        .layers
        .iter()
        .enumerate()
        .map(|(l, w)| layer_optimizer(cfg, l, w, &mut streams))
        .collect::<Result<Vec<_>>>()?;

    let initial_loss = net.loss(&data)?;
    let mut batcher = Batcher::new(data.len(), cfg.batch_size);
    let mut records = Vec::new();
    let mut last_loss = initial_loss;
    let mut peak_grad_entries = 0usize;

    for step in 0..cfg.steps {
        let batch = batcher.next(&mut streams.batches, &data);
        let eta = cfg.schedule.rate(cfg.eta, step, cfg.steps);
        let logging = step % cfg.log_every == 0 || step + 1 == cfg.steps;
        let mut probed = None;

        let loss = if cfg.per_layer_updates {
            let (loss, peak) = net.backward_per_layer(&batch, |l, w, g| {
                if logging && l == cfg.probe_layer {
                    probed = Some(probe(g));
                }
                opts[l].step(w, g, eta, step)
            })?;
            peak_grad_entries = peak_grad_entries.max(peak);
            loss
        } else {
            let report = net.backward(&batch)?;
            peak_grad_entries = peak_grad_entries.max(report.grads.iter().map(Matrix::len).sum());
            if logging {
                probed = Some(probe(&report.grads[cfg.probe_layer]));
            }
            for (l, g) in report.grads.iter().enumerate() {
                opts[l].step(&mut net.layers[l], g, eta, step)?;
            }
            report.loss
        };
        check_finite(step, loss, last_loss)?;
        last_loss = loss;

        if let Some((grad_norm, sr)) = probed {
            let refreshes = opts.iter().map(LayerOptimizer::refresh_count).sum();
            log::debug!("step {step} loss {loss:.6} |G| {grad_norm:.3e}");
            records.push(MetricRecord {
                step,
                loss,
                eta,
                grad_norm,
                stable_rank: sr,
                refreshes,
                optimizer_state_entries: opts.iter().map(LayerOptimizer::state_entries).sum(),
            });
        }
    }

    let final_loss = net.loss(&data)?;
    check_finite(cfg.steps, final_loss, last_loss)?;
    let final_accuracy = match cfg.task {
        Task::MlpClassification => Some(accuracy(&net, &data)?),
        Task::LinearRegression => None,
    };
    let summary = Summary {
        final_loss,
        initial_loss,
        final_accuracy,
        steps: cfg.steps,
        refreshes: opts.iter().map(LayerOptimizer::refresh_count).sum(),
        peak_grad_entries,
        state_entries: opts.iter().map(LayerOptimizer::state_entries).sum(),
        parameter_count: net.parameter_count(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { records, summary, net })
}
