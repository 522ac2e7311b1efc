//! Run configuration: a flat dotted-key text format where every key can
//! also be overridden on the command line with `--set key=value`.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys are
//! configuration errors so sweep axes fail fast. The digest used to tie
//! traces and reports to a configuration covers only the semantically
//! relevant fields (paths and dump toggles are excluded, so a replay of a
//! recorded run digests identically).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheConfig, Norm};
use crate::canvas::{Codec, CodecKind};
use crate::error::{Error, Result};
use crate::parallel::ExecutorMode;
use crate::predictor::{BlobSpec, CostModel, DriftParams, SceneSpec};
use crate::rng;
use crate::schedule::ScheduleKind;
use crate::tiling::ShiftMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendSpec {
    Oracle,
    Drift,
    Replay,
}

/// Procedural scene knobs; the blob list derives from `seed` unless
/// explicit blobs are given (`scene.blob = cy,cx,vy,vx,radius,amplitude`,
/// repeatable).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneParams {
    pub seed: u64,
    pub bg_amplitude: f32,
    pub blobs: usize,
    pub blob_radius: f64,
    pub blob_amplitude: f32,
    pub blob_speed: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub explicit_blobs: Vec<BlobSpec>,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            seed: 1,
            bg_amplitude: 0.6,
            blobs: 2,
            blob_radius: 0.12,
            blob_amplitude: 0.8,
            blob_speed: 0.004,
            explicit_blobs: Vec::new(),
        }
    }
}

impl SceneParams {
    pub fn build(&self) -> SceneSpec {
        let mut scene = SceneSpec::procedural(
            self.seed,
            self.blobs,
            self.blob_radius,
            self.blob_amplitude,
            self.blob_speed,
        );
        if !self.explicit_blobs.is_empty() {
            scene.blobs = self.explicit_blobs.clone();
        }
        scene.background.amplitude = self.bg_amplitude;
        scene
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub frames: usize,
    pub channels: usize,
    pub low_height: usize,
    pub low_width: usize,
    pub target_height: usize,
    pub target_width: usize,
    pub schedule_kind: ScheduleKind,
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sampling_steps: usize,
    pub eta: f64,
    /// Stage-2 iteration count: how many sampling steps the re-noised
    /// latent is taken back (the tile-aware denoising loop length).
    pub renoise_steps: usize,
    pub tile_height: usize,
    pub tile_width: usize,
    pub loop_step: usize,
    /// Shift the grid every n steps; 0 disables shifting.
    pub shift_every: usize,
    pub shift_mode: ShiftMode,
    pub codec: Codec,
    pub cache: CacheConfig,
    pub backend: BackendSpec,
    pub drift: DriftParams,
    pub scene: SceneParams,
    pub workers: usize,
    pub rebalance: bool,
    pub exchange: bool,
    pub executor: ExecutorMode,
    pub cost: CostModel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_record: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_replay: Option<PathBuf>,
    pub dump_final: bool,
    pub dump_pgm: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            frames: 4,
            channels: 2,
            low_height: 36,
            low_width: 64,
            target_height: 144,
            target_width: 256,
            schedule_kind: ScheduleKind::Linear,
            schedule_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sampling_steps: 50,
            eta: 0.0,
            renoise_steps: 45,
            tile_height: 48,
            tile_width: 64,
            loop_step: 16,
            shift_every: 1,
            shift_mode: ShiftMode::Wrap,
            codec: Codec::identity(),
            cache: CacheConfig::default(),
            backend: BackendSpec::Drift,
            drift: DriftParams::default(),
            scene: SceneParams::default(),
            workers: 1,
            rebalance: false,
            exchange: true,
            executor: ExecutorMode::Virtual,
            cost: CostModel::default(),
            trace_record: None,
            trace_replay: None,
            dump_final: true,
            dump_pgm: false,
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::config(format!("key '{key}': cannot parse '{value}' as {want}"))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, v, "an unsigned integer"))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| bad(key, v, "an unsigned integer"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| bad(key, v, "a number"))
}

fn parse_f32(key: &str, v: &str) -> Result<f32> {
    v.parse().map_err(|_| bad(key, v, "a number"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(bad(key, v, "a boolean")),
    }
}

impl RunConfig {
    /// Parse a config file's text over the defaults.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config '{}': {e}", path.display())))?;
        RunConfig::from_text(&text)
    }

    /// Set one dotted key. Unknown keys are configuration errors.
    pub fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_u64(key, v)?,
            "frames" => self.frames = parse_usize(key, v)?,
            "channels" => self.channels = parse_usize(key, v)?,
            "low.height" => self.low_height = parse_usize(key, v)?,
            "low.width" => self.low_width = parse_usize(key, v)?,
            "target.height" => self.target_height = parse_usize(key, v)?,
            "target.width" => self.target_width = parse_usize(key, v)?,
            "schedule.kind" => {
                self.schedule_kind = match v {
                    "linear" => ScheduleKind::Linear,
                    "cosine" => ScheduleKind::Cosine,
                    _ => return Err(bad(key, v, "'linear' or 'cosine'")),
                }
            }
            "schedule.steps" => self.schedule_steps = parse_usize(key, v)?,
            "schedule.beta_start" => self.beta_start = parse_f64(key, v)?,
            "schedule.beta_end" => self.beta_end = parse_f64(key, v)?,
            "sampling.steps" => self.sampling_steps = parse_usize(key, v)?,
            "sampling.eta" => self.eta = parse_f64(key, v)?,
            "renoise.steps" => self.renoise_steps = parse_usize(key, v)?,
            "tile.height" => self.tile_height = parse_usize(key, v)?,
            "tile.width" => self.tile_width = parse_usize(key, v)?,
            "shift.loop_step" => self.loop_step = parse_usize(key, v)?,
            "shift.every" => self.shift_every = parse_usize(key, v)?,
            "shift.mode" => {
                self.shift_mode = match v {
                    "wrap" => ShiftMode::Wrap,
                    "clamp" => ShiftMode::Clamp,
                    _ => return Err(bad(key, v, "'wrap' or 'clamp'")),
                }
            }
            "codec.kind" => {
                self.codec.kind = match v {
                    "identity" => CodecKind::Identity,
                    "avgpool" => CodecKind::AvgPool,
                    _ => return Err(bad(key, v, "'identity' or 'avgpool'")),
                }
            }
            "codec.factor" => self.codec.factor = parse_usize(key, v)?,
            "cache.enabled" => self.cache.enabled = parse_bool(key, v)?,
            "cache.tau" => self.cache.tau = parse_f64(key, v)?,
            "cache.scale_factor" => self.cache.scale_factor = parse_f64(key, v)?,
            "cache.warmup_skip" => self.cache.warmup_skip = parse_usize(key, v)?,
            "cache.tail_skip" => self.cache.tail_skip = parse_usize(key, v)?,
            "cache.norm" => {
                self.cache.norm = match v {
                    "l1" | "L1" => Norm::L1,
                    "l2" | "L2" => Norm::L2,
                    _ => return Err(bad(key, v, "'l1' or 'l2'")),
                }
            }
            "cache.tau_min_mult" => self.cache.tau_min_mult = parse_f64(key, v)?,
            "cache.tau_max_mult" => self.cache.tau_max_mult = parse_f64(key, v)?,
            "backend" => {
                self.backend = match v {
                    "oracle" => BackendSpec::Oracle,
                    "drift" => BackendSpec::Drift,
                    "replay" => BackendSpec::Replay,
                    _ => return Err(bad(key, v, "'oracle', 'drift' or 'replay'")),
                }
            }
            "drift.amplitude" => self.drift.amplitude = parse_f64(key, v)?,
            "drift.fg_ratio" => self.drift.fg_ratio = parse_f64(key, v)?,
            "drift.rate" => self.drift.rate = parse_f64(key, v)?,
            "drift.texture" => self.drift.texture = parse_f64(key, v)?,
            "scene.seed" => self.scene.seed = parse_u64(key, v)?,
            "scene.bg_amplitude" => self.scene.bg_amplitude = parse_f32(key, v)?,
            "scene.blobs" => self.scene.blobs = parse_usize(key, v)?,
            "scene.blob_radius" => self.scene.blob_radius = parse_f64(key, v)?,
            "scene.blob_amplitude" => self.scene.blob_amplitude = parse_f32(key, v)?,
            "scene.blob_speed" => self.scene.blob_speed = parse_f64(key, v)?,
            "scene.blob" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() != 6 {
                    return Err(bad(key, v, "'cy,cx,vy,vx,radius,amplitude'"));
                }
                self.scene.explicit_blobs.push(BlobSpec {
                    center_y: parse_f64(key, parts[0])?,
                    center_x: parse_f64(key, parts[1])?,
                    vel_y: parse_f64(key, parts[2])?,
                    vel_x: parse_f64(key, parts[3])?,
                    radius: parse_f64(key, parts[4])?,
                    amplitude: parse_f32(key, parts[5])?,
                });
            }
            "workers" => self.workers = parse_usize(key, v)?,
            "rebalance" => self.rebalance = parse_bool(key, v)?,
            "exchange" => self.exchange = parse_bool(key, v)?,
            "executor" => {
                self.executor = match v {
                    "virtual" => ExecutorMode::Virtual,
                    "threads" => ExecutorMode::Threads,
                    _ => return Err(bad(key, v, "'virtual' or 'threads'")),
                }
            }
            "cost.units_per_call" => self.cost.units_per_call = parse_f64(key, v)?,
            "cost.stall_ms" => self.cost.stall_ms = parse_u64(key, v)?,
            "trace.record" => self.trace_record = if v.is_empty() { None } else { Some(v.into()) },
            "trace.replay" => self.trace_replay = if v.is_empty() { None } else { Some(v.into()) },
            "dump.final" => self.dump_final = parse_bool(key, v)?,
            "dump.pgm" => self.dump_pgm = parse_bool(key, v)?,
            _ => return Err(Error::config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Apply `key=value` override strings.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for set in sets {
            let Some((key, value)) = set.split_once('=') else {
                return Err(Error::config(format!(
                    "override '{set}' must look like key=value"
                )));
            };
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.channels == 0 {
            return Err(Error::config("frames and channels must be >= 1"));
        }
        if self.low_height == 0
            || self.low_width == 0
            || !self.target_height.is_multiple_of(self.low_height)
            || !self.target_width.is_multiple_of(self.low_width)
        {
            return Err(Error::config(format!(
                "target {}x{} must be an integer multiple of low {}x{}",
                self.target_height, self.target_width, self.low_height, self.low_width
            )));
        }
        let scale_h = self.target_height / self.low_height;
        let scale_w = self.target_width / self.low_width;
        if scale_h != scale_w {
            return Err(Error::config(format!(
                "anisotropic upscale {scale_h}x vs {scale_w}x is not supported"
            )));
        }
        if !self.target_height.is_multiple_of(self.tile_height)
            || !self.target_width.is_multiple_of(self.tile_width)
        {
            return Err(Error::config(format!(
                "tiles {}x{} must divide target {}x{}",
                self.tile_height, self.tile_width, self.target_height, self.target_width
            )));
        }
        if self.sampling_steps == 0 || self.sampling_steps > self.schedule_steps {
            return Err(Error::config(format!(
                "sampling steps {} must be in 1..={}",
                self.sampling_steps, self.schedule_steps
            )));
        }
        if self.renoise_steps == 0 || self.renoise_steps > self.sampling_steps {
            return Err(Error::config(format!(
                "renoise steps {} must be in 1..={}",
                self.renoise_steps, self.sampling_steps
            )));
        }
        if self.loop_step == 0 {
            return Err(Error::config("shift.loop_step must be >= 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers must be >= 1"));
        }
        if self.backend == BackendSpec::Replay && self.trace_replay.is_none() {
            return Err(Error::config("backend 'replay' requires trace.replay"));
        }
        self.codec.validate()?;
        self.cache.validate()?;
        self.cost.validate()?;
        self.scene.build().validate()?;
        Ok(())
    }

    /// Digest over the configuration fields that determine replay
    /// compatibility: geometry, schedule, plan, cache and scheduling knobs.
    /// The backend selector, trace paths and dump toggles are excluded —
    /// a replay of a recorded run must digest identically to the run that
    /// recorded it.
    pub fn digest(&self) -> u64 {
        let mut semantic = self.clone();
        semantic.backend = BackendSpec::Oracle;
        semantic.trace_record = None;
        semantic.trace_replay = None;
        semantic.dump_final = false;
        semantic.dump_pgm = false;
        let json = serde_json::to_string(&semantic).expect("config serializes");
        rng::fnv1a64(json.as_bytes())
    }

    pub fn upscale_factor(&self) -> usize {
        self.target_height / self.low_height
    }
}
