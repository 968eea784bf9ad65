//! Attribute-aligned representation learning at desk scale.
//!
//! A single trained encoder produces latent codes whose nodes are ordered
//! from emotion-related (top) to identity-related (bottom). Masking one end
//! then yields an identity-free representation for emotion recognition or an
//! emotion-free representation for speaker verification, without retraining.
//!
//! The crate is organized around that pipeline:
//!
//! - [`tensor`], [`kernels`], [`autodiff`]: dense f64 tensors and a small
//!   define-by-run reverse-mode engine.
//! - [`schedule`]: monotone preserve-rate schedules and layered dropout.
//! - [`model`]: the layered-representation VAE, its baselines, losses, and
//!   checkpointing.
//! - [`train`], [`optim`]: Adam training with seeded batching and
//!   validation-based selection.
//! - [`data`]: synthetic entangled-attribute datasets and CSV ingestion with
//!   speaker-disjoint splits.
//! - [`eval`]: weighted f-score, equal error rate, and probe training.
//! - [`experiments`]: the method comparison and incremental-masking studies.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod plot;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
