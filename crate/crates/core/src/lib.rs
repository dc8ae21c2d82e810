//! Adversarial class prompting for weakly-supervised change detection.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors and a small reverse-mode tape.
//! - [`model`]: a shared-weight two-stream change classifier with a
//!   GAP + linear head.
//! - [`cam`]: class localization maps (CAM / Grad-CAM), max normalisation,
//!   and the binary change prediction.
//! - [`advcp`]: adversarial prompt mining, the online global prototype, and
//!   the rectification losses, including the multi-label and
//!   fully-supervised variants.
//! - [`data`]: a seeded synthetic bi-temporal benchmark with co-occurring
//!   distractors, plus the on-disk dataset format.
//! - [`metrics`]: confusion counts and the F1 / OA / IoU summary.
//! - [`inference`]: the deployment path (no mining, no prototype).
//! - [`trainer`]: the training loop, evaluation, and ablation sweeps.
//! - [`export`]: heatmap PNGs and per-pixel feature tables.
//!
//! Runnable walkthroughs live in `examples/`; the `advcp` binary wraps the
//! same API as a command-line tool.

pub mod advcp;
pub mod cam;
pub mod config;
pub mod data;
pub mod error;
pub mod export;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
