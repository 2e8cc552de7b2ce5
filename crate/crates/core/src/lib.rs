//! Gradient low-rank projection toolkit.
//!
//! Optimizer wrappers that keep Adam/Adafactor state in a refreshed low-rank
//! subspace of each weight gradient. The other modules exist to check them:
//! dense linear algebra, toy networks with exact gradients, simulators for
//! gradient dynamics, memory accounting and the experiment harness.

pub mod error;
pub mod harness;
pub mod linalg;
pub mod memory;
pub mod models;
pub mod optim;
pub mod projector;
pub mod random;
pub mod theory;

pub use error::{Error, Result};
pub use linalg::Matrix;
