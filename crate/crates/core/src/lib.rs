//! Gaze-supervised attention regularization at desk scale.
//!
//! The crate turns raw gaze traces into per-frame supervision targets
//! (Gaussian heatmaps, occlusion-aware flow-warped temporal aggregation,
//! patch-wise distributions), trains a small global-query attention model
//! with a KL-augmented objective against those targets, and evaluates
//! attention/gaze alignment on synthetic egocentric scenes with known
//! ground truth.

pub mod config;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gaze;
pub mod numerics;
pub mod pipeline;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
