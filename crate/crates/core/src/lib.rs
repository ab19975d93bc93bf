//! Behavioral models and training machinery for fused analog (content
//! addressable memory) activations mixed with conventional ADC + digital
//! activation datapaths.
//!
//! Module map:
//! - [`tensor`]: dense tensors, tape-based autodiff, SGD
//! - [`device`]: interval codebooks, projection, device variation
//! - [`activation`]: analog, digital and Gumbel-Softmax mixed activations
//! - [`energy`]: activation and A/D energy accounting
//! - [`trainer`]: warmup / search / variation-aware retraining
//! - [`workbench`]: config, datasets, artifacts and experiment commands

pub mod activation;
pub mod device;
pub mod energy;
mod error;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod workbench;

pub use error::{Error, Result};
