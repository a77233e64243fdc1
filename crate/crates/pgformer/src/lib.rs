//! Multi-person motion forecasting with proxy-bridged cross-query attention.
//!
//! The crate is organized around a small dense-tensor core with reverse-mode
//! differentiation (`numerics`), skeleton/scene handling and temporal DCT
//! coding (`pose`), the cross-query attention mechanism (`xqa`), the full
//! encoder/decoder model (`model`), losses and the training loop
//! (`training`), evaluation metrics (`metrics`), file formats and synthetic
//! data (`data`), and the command-line entry points (`cli`).

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pose;
pub mod training;
pub mod xqa;

pub use error::{Error, Result};
