//! Deterministic two-stage tiled diffusion engine.
//!
//! A low-resolution sketch pass fixes global structure; a pixel-space
//! bicubic upscale plus deterministic re-noising seeds a second pass that
//! denoises the full canvas as shifted non-overlapping tiles. Per-tile
//! residual caching skips predictor calls while a transformation-rate drift
//! bound holds, per-region thresholds adapt to how dynamic each tile is,
//! and a tile-parallel executor with a single end-of-step gather reassigns
//! the surviving work across workers each step.
//!
//! The noise predictor is pluggable ([`predictor::NoisePredictor`]) with
//! analytic oracle and synthetic-scene backends plus file-based record and
//! replay, so every pipeline property is verifiable without trained models.

pub mod cache;
pub mod canvas;
pub mod config;
pub mod error;
pub mod metrics;
pub mod parallel;
pub mod pipeline;
pub mod predictor;
pub mod report;
pub mod rng;
pub mod schedule;
pub mod tiling;
pub mod trace;

pub use canvas::{LatentCanvas, Space};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use pipeline::{Pipeline, RunArtifacts};
