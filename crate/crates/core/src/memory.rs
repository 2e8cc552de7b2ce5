//! Parameter and optimizer-state accounting per layer and per model.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{DEFAULT_BLOCK_SIZE, SCALE_BYTES};

/// BF16.
pub const DEFAULT_BYTES_PER_ENTRY: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Full,
    GaLore,
    Lora,
    ReLora,
    LowRank,
    /// Full-rank Adam with int8 moments.
    Full8bit,
    /// GaLore with int8 moments; the projector keeps full precision.
    GaLore8bit,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Full,
        Method::GaLore,
        Method::Lora,
        Method::ReLora,
        Method::LowRank,
        Method::Full8bit,
        Method::GaLore8bit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::GaLore => "galore",
            Method::Lora => "lora",
            Method::ReLora => "relora",
            Method::LowRank => "low-rank",
            Method::Full8bit => "full-8bit",
            Method::GaLore8bit => "galore-8bit",
        }
    }

    fn eight_bit(self) -> bool {
        matches!(self, Method::Full8bit | Method::GaLore8bit)
    }
}

/// Weight shape with `m ≤ n` and a rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub m: usize,
    pub n: usize,
    pub r: usize,
}

impl LayerDims {
    /// Orients the shape so that `m ≤ n`.
    pub fn new(rows: usize, cols: usize, r: usize) -> Result<Self> {
        let (m, n) = if rows <= cols { (rows, cols) } else { (cols, rows) };
        let d = Self { m, n, r };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.m > self.n {
            return Err(Error::InvalidInput(format!("bad layer shape {}x{}", self.m, self.n)));
        }
        if self.r == 0 || self.r > self.m {
            return Err(Error::InvalidInput(format!(
                "rank {} outside [1, {}] for a {}x{} layer",
                self.r, self.m, self.m, self.n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryReport {
    pub method: Method,
    pub weight_params: u64,
    pub optimizer_params: u64,
    pub weight_bytes: u64,
    pub optimizer_bytes: u64,
    pub total_bytes: u64,
}

impl MemoryReport {
    fn new(method: Method, weight_params: u64, optimizer_params: u64, weight_bytes: u64, optimizer_bytes: u64) -> Self {
        Self {
            method,
            weight_params,
            optimizer_params,
            weight_bytes,
            optimizer_bytes,
            total_bytes: weight_bytes + optimizer_bytes,
        }
    }

    pub fn total_params(&self) -> u64 {
        self.weight_params + self.optimizer_params
    }

    fn add(&mut self, other: &MemoryReport) {
        self.weight_params += other.weight_params;
        self.optimizer_params += other.optimizer_params;
        self.weight_bytes += other.weight_bytes;
        self.optimizer_bytes += other.optimizer_bytes;
        self.total_bytes += other.total_bytes;
    }
}

/// Bytes for one int8 tensor of `entries` values.
pub fn q8_bytes(entries: u64) -> u64 {
    let blocks = entries.div_ceil(DEFAULT_BLOCK_SIZE as u64);
    entries + SCALE_BYTES as u64 * blocks
}

/// `(weights, projector-or-adaptor optimizer entries, moment entries per tensor, moment tensors)`.
fn layer_counts(d: &LayerDims, method: Method) -> (u64, u64, u64, u64) {
    let (m, n, r) = (d.m as u64, d.n as u64, d.r as u64);
    match method {
        Method::Full | Method::Full8bit => (m * n, 0, m * n, 2),
        Method::GaLore | Method::GaLore8bit => (m * n, m * r, n * r, 2),
        // Two moments each for the m×r and r×n factors.
        Method::Lora | Method::ReLora => (m * n + m * r + n * r, 0, m * r + n * r, 2),
        Method::LowRank => (m * r + n * r, 0, m * r + n * r, 2),
    }
}

/// Weight and optimizer-state accounting for one weight matrix.
pub fn estimate_layer(dims: LayerDims, method: Method, bytes_per_entry: usize) -> Result<MemoryReport> {
    dims.validate()?;
    if bytes_per_entry == 0 {
        return Err(Error::InvalidInput("bytes_per_entry must be positive".into()));
    }
    let bpe = bytes_per_entry as u64;
    let (weights, extra, per_moment, moments) = layer_counts(&dims, method);
    let optimizer = extra + per_moment * moments;
    let moment_bytes = if method.eight_bit() {
        moments * q8_bytes(per_moment)
    } else {
        moments * per_moment * bpe
    };
    Ok(MemoryReport::new(method, weights, optimizer, weights * bpe, extra * bpe + moment_bytes))
}

/// A weight matrix in a model inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

/// LLaMA-style decoder shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlamaShape {
    pub hidden: usize,
    pub intermediate: usize,
    pub heads: usize,
    pub layers: usize,
    pub vocab: usize,
}

impl LlamaShape {
    /// Attention q/k/v/o and MLP gate/up/down per block.
    pub fn projected_matrices(&self) -> Vec<MatrixEntry> {
        let h = self.hidden;
        let i = self.intermediate;
        let l = self.layers;
        let e = |name: &str, rows, cols| MatrixEntry {
            name: name.to_string(),
            rows,
            cols,
            count: l,
        };
        vec![
            e("attn.q", h, h),
            e("attn.k", h, h),
            e("attn.v", h, h),
            e("attn.o", h, h),
            e("mlp.gate", i, h),
            e("mlp.up", i, h),
            e("mlp.down", h, i),
        ]
    }

    /// Untied input embedding and output head, two RMSNorm vectors per block
    /// plus the final norm.
    pub fn non_projected_params(&self) -> u64 {
        let h = self.hidden as u64;
        2 * self.vocab as u64 * h + (2 * self.layers as u64 + 1) * h
    }
}

/// Model inventory as read from JSON. Either `llama` or `matrices` must be
/// given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub rank: usize,
    #[serde(default = "default_bpe")]
    pub bytes_per_entry: usize,
    #[serde(default)]
    pub llama: Option<LlamaShape>,
    #[serde(default)]
    pub matrices: Vec<MatrixEntry>,
    #[serde(default)]
    pub non_projected_params: u64,
}

fn default_bpe() -> usize {
    DEFAULT_BYTES_PER_ENTRY
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = crate::harness::parse_json(text)?;
        cfg.inventory()?;
        Ok(cfg)
    }

    /// Projected matrices and the count of non-projected parameters.
    pub fn inventory(&self) -> Result<(Vec<MatrixEntry>, u64)> {
        match (&self.llama, self.matrices.is_empty()) {
            (Some(_), false) => Err(Error::config("matrices", "give either `llama` or `matrices`, not both")),
            (Some(shape), true) => Ok((shape.projected_matrices(), shape.non_projected_params() + self.non_projected_params)),
            (None, false) => Ok((self.matrices.clone(), self.non_projected_params)),
            (None, true) => {
                if self.non_projected_params == 0 {
                    Err(Error::InvalidInput("model config lists no parameters".into()))
                } else {
                    Ok((Vec::new(), self.non_projected_params))
                }
            }
        }
    }
}

/// Sums layer estimates over the projected matrices and charges full-rank
/// Adam (int8 for the 8-bit methods) for every non-projected parameter.
pub fn estimate_model(config: &ModelConfig, method: Method) -> Result<MemoryReport> {
    let (matrices, non_projected) = config.inventory()?;
    let bpe = config.bytes_per_entry;
    if bpe == 0 {
        return Err(Error::InvalidInput("bytes_per_entry must be positive".into()));
    }
    let mut total = MemoryReport::new(method, 0, 0, 0, 0);
    for mat in &matrices {
        if mat.count == 0 {
            continue;
        }
        let short = mat.rows.min(mat.cols);
        let dims = LayerDims::new(mat.rows, mat.cols, config.rank.min(short))?;
        if config.rank > short {
            log::warn!("rank {} clamped to {short} for {}", config.rank, mat.name);
        }
        let one = estimate_layer(dims, method, bpe)?;
        for _ in 0..mat.count {
            total.add(&one);
        }
    }
    if non_projected > 0 {
        let bpe = bpe as u64;
        let opt_bytes = if method.eight_bit() {
            2 * q8_bytes(non_projected)
        } else {
            2 * non_projected * bpe
        };
        total.add(&MemoryReport::new(method, non_projected, 2 * non_projected, non_projected * bpe, opt_bytes));
    }
    Ok(total)
}

/// Bytes in decimal gigabytes (10⁹).
pub fn gigabytes(bytes: u64) -> f64 {
    bytes as f64 / 1e9
}

pub fn render_table(name: &str, reports: &[MemoryReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{name}");
    let _ = writeln!(s, "{:<12} {:>12} {:>12} {:>12}", "method", "weights", "optimizer", "total");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<12} {:>11.3}G {:>11.3}G {:>11.3}G",
            r.method.name(),
            gigabytes(r.weight_bytes),
            gigabytes(r.optimizer_bytes),
            gigabytes(r.total_bytes)
        );
    }
    s
}

pub fn write_csv<W: Write>(out: W, reports: &[MemoryReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "weight_params",
        "optimizer_params",
        "weight_bytes",
        "optimizer_bytes",
        "total_bytes",
    ])?;
    for r in reports {
        w.write_record([
            r.method.name().to_string(),
            r.weight_params.to_string(),
            r.optimizer_params.to_string(),
            r.weight_bytes.to_string(),
            r.optimizer_bytes.to_string(),
            r.total_bytes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
