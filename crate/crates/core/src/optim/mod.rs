//! Optimizer steps. All gradients follow the ascent convention
//! `G = -∇φ`, so every step adds its update to the weight.

mod adafactor;
mod adam;
mod galore;
mod lora;
mod quant;

pub use adafactor::{adafactor_step, AdafactorHyper, AdafactorState};
pub use adam::{adam_step, AdamHyper, AdamState};
pub use galore::{
    galore_adam_step, GaLoreConfig, GaLoreOptimState, InnerKind, Regularizer, SwitchPolicy,
};
pub use lora::{lora_adam_step, LoraState, DEFAULT_LORA_ALPHA};
pub use quant::{
    q8_roundtrip, Adam8State, Quantized8Block, QuantizedMatrix, DEFAULT_BLOCK_SIZE, SCALE_BYTES,
};

use crate::error::Result;
use crate::linalg::Matrix;

/// Per-layer optimizer used by the training harness.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerOptimizer {
    /// `W ← W + η G`.
    Sgd,
    Adam(AdamState),
    GaLore(GaLoreOptimState),
    /// The weight is overwritten with the adaptor's effective weight.
    Lora(LoraState),
}

impl LayerOptimizer {
    pub fn step(&mut self, w: &mut Matrix, g: &Matrix, eta: f64, step: u64) -> Result<()> {
        match self {
            LayerOptimizer::Sgd => w.axpy(eta, g),
            LayerOptimizer::Adam(s) => {
                let dw = s.step(g, eta)?;
                w.axpy(1.0, &dw)
            }
            LayerOptimizer::GaLore(s) => s.step(w, g, eta, step),
            LayerOptimizer::Lora(s) => {
                s.step(g, eta)?;
                *w = s.effective();
                Ok(())
            }
        }
    }

    /// Entries of optimizer state (moments and projector factors).
    pub fn state_entries(&self) -> usize {
        match self {
            LayerOptimizer::Sgd => 0,
            LayerOptimizer::Adam(s) => s.entries(),
            LayerOptimizer::GaLore(s) => s.state_entries(),
            LayerOptimizer::Lora(s) => s.state_entries(),
        }
    }

    pub fn refresh_count(&self) -> u64 {
        match self {
            LayerOptimizer::GaLore(s) => s.projector.refresh_count(),
            _ => 0,
        }
    }
}
