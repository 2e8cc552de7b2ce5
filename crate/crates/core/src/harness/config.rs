use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{AdamHyper, SwitchPolicy, DEFAULT_BLOCK_SIZE, DEFAULT_LORA_ALPHA};
use crate::projector::{DEFAULT_SWITCH_FREQ, NEVER};
use crate::theory::families::Family;
use crate::theory::DynamicsSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Chained linear student fitting a random linear teacher under ℓ2.
    LinearRegression,
    /// Leaky-ReLU MLP classifying labels produced by a random teacher MLP.
    MlpClassification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    GaloreAdam,
    GaloreAdafactor,
    LoraAdam,
    #[serde(rename = "galore-adam-8bit")]
    GaloreAdam8bit,
}

impl OptimizerKind {
    pub fn is_galore(self) -> bool {
        matches!(
            self,
            OptimizerKind::GaloreAdam | OptimizerKind::GaloreAdafactor | OptimizerKind::GaloreAdam8bit
        )
    }

    pub fn needs_rank(self) -> bool {
        self.is_galore() || self == OptimizerKind::LoraAdam
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rho {
    /// The optimizer's own entry-wise regularizer.
    Adam,
    /// `N = R`.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Never {
    Never,
}

/// A refresh period in steps, or `"never"` (refresh at step 0 only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SwitchFreq {
    Every(u64),
    Never(Never),
}

impl Default for SwitchFreq {
    fn default() -> Self {
        SwitchFreq::Every(DEFAULT_SWITCH_FREQ)
    }
}

impl SwitchFreq {
    pub fn period(self) -> u64 {
        match self {
            SwitchFreq::Every(t) => t,
            SwitchFreq::Never(_) => NEVER,
        }
    }

    pub fn label(self) -> String {
        match self {
            SwitchFreq::Every(t) => t.to_string(),
            SwitchFreq::Never(_) => "never".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Linear warmup over the first 10% of steps, then cosine decay to 10%
    /// of the peak rate.
    WarmupCosine,
}

impl Schedule {
    pub fn rate(self, eta: f64, step: u64, total: u64) -> f64 {
        match self {
            Schedule::Constant => eta,
            Schedule::WarmupCosine => {
                let warm = (total as f64 * 0.1).ceil().max(1.0) as u64;
                if step < warm {
                    eta * (step + 1) as f64 / warm as f64
                } else {
                    let span = total.saturating_sub(warm).max(1) as f64;
                    let p = ((step - warm) as f64 / span).min(1.0);
                    eta * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()))
                }
            }
        }
    }
}

fn default_alpha() -> f64 {
    0.25
}
fn default_batch() -> usize {
    16
}
fn default_log_every() -> u64 {
    10
}
fn default_lora_alpha() -> f64 {
    DEFAULT_LORA_ALPHA
}
fn default_block() -> usize {
    DEFAULT_BLOCK_SIZE
}
fn default_dataset() -> usize {
    512
}
fn default_true() -> bool {
    true
}

/// One training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub task: Task,
    /// Layer widths from input to output; depth is `dims.len() − 1`.
    pub dims: Vec<usize>,
    /// Widths of the classification teacher; defaults to `dims`. Input
    /// and output widths must match the student.
    #[serde(default)]
    pub teacher_dims: Option<Vec<usize>>,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub switch_freq: SwitchFreq,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub eta: f64,
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "Rho::adam")]
    pub rho: Rho,
    #[serde(default)]
    pub switch_policy: SwitchPolicy,
    #[serde(default)]
    pub per_layer_updates: bool,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_lora_alpha")]
    pub lora_alpha: f64,
    #[serde(default = "default_block")]
    pub block_size: usize,
    #[serde(default = "default_dataset")]
    pub dataset_size: usize,
    /// Classification: probability of replacing a label by a random class.
    /// Regression: standard deviation of additive target noise.
    #[serde(default)]
    pub label_noise: f64,
    /// Keep the output layer on full-rank Adam when the network has more
    /// than one layer.
    #[serde(default = "default_true")]
    pub head_full_rank: bool,
    /// Layer whose gradient stable rank is logged.
    #[serde(default)]
    pub probe_layer: usize,
    #[serde(default)]
    pub adam: AdamHyper,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl Rho {
    fn adam() -> Self {
        Rho::Adam
    }
}

impl RunConfig {
    /// Parses JSON, rejecting unknown fields, then validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn depth(&self) -> usize {
        self.dims.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::config("dims", "need at least two positive widths"));
        }
        if self.task == Task::MlpClassification && *self.dims.last().expect("len >= 2") < 2 {
            return Err(Error::config("dims", "classification needs at least two classes"));
        }
        if let Some(t) = &self.teacher_dims {
            if t.len() < 2 || t.contains(&0) || t[0] != self.dims[0] || t.last() != self.dims.last() {
                return Err(Error::config("teacher_dims", "must share input and output widths with dims"));
            }
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config("eta", "must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.dataset_size == 0 {
            return Err(Error::config("dataset_size", "must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every", "must be positive"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::config("alpha", "must be positive"));
        }
        if self.block_size == 0 {
            return Err(Error::config("block_size", "must be positive"));
        }
        if !(self.lora_alpha > 0.0) {
            return Err(Error::config("lora_alpha", "must be positive"));
        }
        if !(self.label_noise >= 0.0) {
            return Err(Error::config("label_noise", "must be non-negative"));
        }
        if self.task == Task::MlpClassification && self.label_noise > 1.0 {
            return Err(Error::config("label_noise", "is a probability for classification"));
        }
        if let SwitchFreq::Every(0) = self.switch_freq {
            return Err(Error::config("switch_freq", "must be positive or \"never\""));
        }
        if self.probe_layer >= self.depth() {
            return Err(Error::config("probe_layer", format!("network has {} layers", self.depth())));
        }
        self.adam
            .validate()
            .map_err(|e| Error::config("adam", e.to_string()))?;
        match (self.optimizer.needs_rank(), self.rank) {
            (true, None) => return Err(Error::config("rank", "required for this optimizer")),
            (_, Some(0)) => return Err(Error::config("rank", "must be positive")),
            _ => {}
        }
        if self.rho == Rho::Identity && !self.optimizer.is_galore() {
            return Err(Error::config("rho", "identity is only meaningful for galore optimizers"));
        }
        Ok(())
    }
}

/// Strict JSON parsing with the failing field path in the error.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyRequest {
    family: Family,
    seed: u64,
    steps: usize,
}

/// A dynamics spec file: either explicit coefficient matrices, or
/// `{"family": ..., "seed": ..., "steps": ...}` naming a generator.
pub fn load_dynamics_spec(text: &str) -> Result<DynamicsSpec> {
    let value: serde_json::Value = parse_json(text)?;
    let spec = if value.get("family").is_some() {
        let req: FamilyRequest = parse_json(text)?;
        req.family.build(req.seed, req.steps)?
    } else {
        parse_json(text)?
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dynamics_spec_forms() {
        let s = load_dynamics_spec(r#"{"family": "two-mode", "seed": 1, "steps": 5}"#).unwrap();
        assert_eq!(s.steps, 5);
        let explicit = r#"{"a": [[[1.0], [1.0]]], "b": [[[1.0, 0.0], [0.0, 2.0]]],
            "c": [[[1.0]]], "w0": [[0.0], [0.0]], "eta": 0.1, "steps": 3}"#;
        assert_eq!(load_dynamics_spec(explicit).unwrap().shape(), (2, 1));
        let bad = r#"{"family": "two-mode", "seed": 1, "steps": 5, "x": 1}"#;
        assert!(matches!(load_dynamics_spec(bad), Err(Error::Config { .. })));
        let unstable = explicit.replace("0.1", "1.5");
        assert!(matches!(load_dynamics_spec(&unstable), Err(Error::Unstable { .. })));
    }

    const BASE: &str = r#"{"seed": 1, "task": "linear-regression", "dims": [4, 3],
        "optimizer": "adam", "eta": 0.01, "steps": 10}"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_json(BASE).unwrap();
        assert_eq!(c.alpha, 0.25);
        assert_eq!(c.switch_freq.period(), 200);
        assert_eq!(c.log_every, 10);
        assert_eq!(c.rho, Rho::Adam);
        assert_eq!(c.switch_policy, SwitchPolicy::Carry);
        assert!(!c.per_layer_updates);
    }

    #[test]
    fn unknown_field_reports_path() {
        let text = BASE.replace("\"steps\": 10", "\"steps\": 10, \"stpes\": 3");
        match RunConfig::from_json(&text) {
            Err(Error::Config { message, .. }) => assert!(message.contains("stpes")),
            other => panic!("{other:?}"),
        }
        let text = BASE.replace("\"adam\"", "\"adamw\"");
        match RunConfig::from_json(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "optimizer"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_validation() {
        let text = BASE.replace("\"adam\"", "\"galore-adam\"");
        match RunConfig::from_json(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "rank"),
            other => panic!("{other:?}"),
        }
        let text = BASE.replace("0.01", "-1");
        assert!(matches!(RunConfig::from_json(&text), Err(Error::Config { .. })));
    }

    #[test]
    fn switch_freq_forms() {
        let text = BASE.replace("\"steps\": 10", "\"steps\": 10, \"switch_freq\": \"never\"");
        assert_eq!(RunConfig::from_json(&text).unwrap().switch_freq.period(), NEVER);
        let text = BASE.replace("\"steps\": 10", "\"steps\": 10, \"switch_freq\": 50");
        assert_eq!(RunConfig::from_json(&text).unwrap().switch_freq.period(), 50);
        let text = BASE.replace("\"steps\": 10", "\"steps\": 10, \"switch_freq\": 0");
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn warmup_cosine_shape() {
        let s = Schedule::WarmupCosine;
        assert!((s.rate(1.0, 0, 100) - 0.1).abs() < 1e-12);
        assert!((s.rate(1.0, 9, 100) - 1.0).abs() < 1e-12);
        assert!((s.rate(1.0, 10, 100) - 1.0).abs() < 1e-12);
        assert!((s.rate(1.0, 100, 100) - 0.1).abs() < 1e-12);
        assert_eq!(Schedule::Constant.rate(0.3, 5, 10), 0.3);
    }
}
