//! Pluggable noise prediction.
//!
//! The denoiser network is abstracted behind [`NoisePredictor`]. Two
//! analytic backends live here:
//!
//! - [`OraclePredictor`] inverts the forward closure against a known target,
//!   `eps = (z_t - sqrt(abar_t) * z0*) / sqrt(1 - abar_t)`, so a sampling
//!   loop driven by it lands on the target exactly and every pipeline stage
//!   becomes verifiable to floating-point precision.
//! - [`DriftPredictor`] adds a deterministic, region-dependent perturbation
//!   on top of the oracle: outputs inside foreground blobs change faster
//!   across steps by a configurable ratio, while background regions carry a
//!   static high-frequency texture that raises their per-tile noise standard
//!   deviation. That gives the cache something realistic to skip and the
//!   region-aware thresholds something to measure.
//!
//! Both backends are pure functions of `(request, parameters)` evaluated at
//! global canvas coordinates, so outputs do not depend on how the canvas is
//! tiled or which worker issues the call.
//!
//! A third backend, trace replay, lives in [`crate::trace`].

use serde::{Deserialize, Serialize};

use crate::canvas::{LatentCanvas, Space};
use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::VarianceSchedule;
use crate::tiling::TileRef;

/// Tile index used for full-canvas (untiled) predictor calls.
pub const FULL_CANVAS_TILE: usize = u32::MAX as usize;

/// One noise-prediction request.
#[derive(Debug)]
pub struct PredictRequest<'a> {
    pub tile_latent: &'a LatentCanvas,
    /// Schedule index, not sampling-step position.
    pub timestep: usize,
    pub tile_ref: TileRef,
    /// Opaque scene/prompt identifier.
    pub conditioning_id: u64,
}

/// Deterministic latency accounting for scheduling experiments.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostModel {
    pub units_per_call: f64,
    /// Optional wall-clock stall per call, honored by the threaded executor.
    pub stall_ms: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            units_per_call: 1.0,
            stall_ms: 0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if self.units_per_call < 0.0 {
            return Err(Error::config("cost units must be >= 0"));
        }
        Ok(())
    }
}

/// A predicted noise tile plus the cost units the call charges to the
/// executing worker.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub noise: LatentCanvas,
    pub cost_units: f64,
}

/// Contract every backend satisfies: same request, same output, every time,
/// from any thread.
pub trait NoisePredictor: Send + Sync {
    fn predict(&self, req: &PredictRequest<'_>) -> Result<Prediction>;

    fn cost_model(&self) -> CostModel {
        CostModel::default()
    }
}

impl<T: NoisePredictor + ?Sized> NoisePredictor for std::sync::Arc<T> {
    fn predict(&self, req: &PredictRequest<'_>) -> Result<Prediction> {
        (**self).predict(req)
    }

    fn cost_model(&self) -> CostModel {
        (**self).cost_model()
    }
}

/// Background field parameters, evaluated at normalized coordinates so the
/// same scene renders consistently at any resolution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub amplitude: f32,
    pub freq_y: f64,
    pub freq_x: f64,
    pub freq_t: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        BackgroundSpec {
            amplitude: 0.6,
            freq_y: 1.5,
            freq_x: 2.5,
            freq_t: 1.0,
        }
    }
}

/// One moving foreground blob; positions and radius are normalized to the
/// unit square and reflected at the borders so trajectories stay in bounds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BlobSpec {
    pub center_y: f64,
    pub center_x: f64,
    pub vel_y: f64,
    pub vel_x: f64,
    pub radius: f64,
    pub amplitude: f32,
}

impl BlobSpec {
    /// Blob center at a frame, reflected into `[radius, 1 - radius]`.
    pub fn center_at(&self, frame: usize) -> (f64, f64) {
        let reflect = |p: f64, r: f64| -> f64 {
            let lo = r.min(0.5);
            let hi = 1.0 - lo;
            let span = hi - lo;
            if span <= 0.0 {
                return 0.5;
            }
            // Triangle wave over [lo, hi].
            let mut q = (p - lo).rem_euclid(2.0 * span);
            if q > span {
                q = 2.0 * span - q;
            }
            lo + q
        };
        (
            reflect(self.center_y + self.vel_y * frame as f64, self.radius),
            reflect(self.center_x + self.vel_x * frame as f64, self.radius),
        )
    }
}

/// Procedural scene: the ground-truth generator behind both stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub background: BackgroundSpec,
    pub blobs: Vec<BlobSpec>,
}

impl SceneSpec {
    /// Derive a scene with `n_blobs` seeded blobs.
    pub fn procedural(
        seed: u64,
        n_blobs: usize,
        radius: f64,
        amplitude: f32,
        speed: f64,
    ) -> SceneSpec {
        let mut r = rng::stream(seed, "scene-blobs");
        let unit = |r: &mut rand_chacha::ChaCha8Rng| {
            use rand_core::RngCore;
            (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64
        };
        let blobs = (0..n_blobs)
            .map(|_| {
                let cy = 0.25 + 0.5 * unit(&mut r);
                let cx = 0.25 + 0.5 * unit(&mut r);
                let angle = std::f64::consts::TAU * unit(&mut r);
                BlobSpec {
                    center_y: cy,
                    center_x: cx,
                    vel_y: speed * angle.sin(),
                    vel_x: speed * angle.cos(),
                    radius,
                    amplitude,
                }
            })
            .collect();
        SceneSpec {
            seed,
            background: BackgroundSpec::default(),
            blobs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.blobs.iter().enumerate() {
            if !(b.radius > 0.0 && b.radius <= 0.5) {
                return Err(Error::config(format!(
                    "blob {i}: radius must be in (0, 0.5], got {}",
                    b.radius
                )));
            }
        }
        Ok(())
    }

    fn channel_phase(&self, channel: usize) -> f64 {
        rng::derive_seed(self.seed, &format!("scene-phase-{channel}")) as f64 / u64::MAX as f64
            * std::f64::consts::TAU
    }

    /// Ground-truth value at normalized coordinates.
    fn value_at(&self, channel: usize, nf: f64, ny: f64, nx: f64, frame: usize) -> f32 {
        let bg = &self.background;
        let phase = self.channel_phase(channel);
        let mut v = f64::from(bg.amplitude)
            * (std::f64::consts::TAU * (bg.freq_y * ny + bg.freq_x * nx + bg.freq_t * nf) + phase)
                .sin();
        for b in &self.blobs {
            let (cy, cx) = b.center_at(frame);
            let d2 = (ny - cy).powi(2) + (nx - cx).powi(2);
            let s2 = (b.radius / 2.0).powi(2);
            v += f64::from(b.amplitude) * (-0.5 * d2 / s2).exp();
        }
        v as f32
    }

    /// Render the clean target latent `z0*` at the given dimensions.
    pub fn render_target(
        &self,
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
    ) -> LatentCanvas {
        let nf_den = frames.max(2) as f64 - 1.0;
        LatentCanvas::from_fn(
            frames,
            channels,
            height,
            width,
            Space::Latent,
            |f, c, y, x| {
                self.value_at(
                    c,
                    f as f64 / nf_den,
                    (y as f64 + 0.5) / height as f64,
                    (x as f64 + 0.5) / width as f64,
                    f,
                )
            },
        )
    }

    /// Whether a canvas element lies inside any foreground blob.
    pub fn in_foreground(&self, frame: usize, ny: f64, nx: f64) -> bool {
        self.blobs.iter().any(|b| {
            let (cy, cx) = b.center_at(frame);
            (ny - cy).powi(2) + (nx - cx).powi(2) <= b.radius * b.radius
        })
    }

    /// Stable identifier used as the conditioning id.
    pub fn conditioning_id(&self) -> u64 {
        rng::derive_seed(self.seed, "scene-conditioning")
    }
}

/// Exact noise for a tile against a known target:
/// `eps = (z_t - sqrt(abar_t) * z0*_tile) / sqrt(1 - abar_t)`.
///
/// The target tile is sliced with the same wrap semantics the tiling uses.
pub fn oracle_noise(
    tile_latent: &LatentCanvas,
    timestep: usize,
    origin_y: usize,
    origin_x: usize,
    target: &LatentCanvas,
    sched: &VarianceSchedule,
) -> Result<LatentCanvas> {
    if timestep >= sched.len() {
        return Err(Error::config(format!(
            "timestep {timestep} out of schedule range {}",
            sched.len()
        )));
    }
    let bar = sched.alpha_bar[timestep];
    if bar >= 1.0 {
        return Err(Error::Singularity(format!(
            "oracle noise undefined at t={timestep}: alpha_bar = 1"
        )));
    }
    let tile_target = target.slice(
        origin_y,
        origin_x,
        tile_latent.height,
        tile_latent.width,
        true,
    )?;
    let a = bar.sqrt() as f32;
    let inv = (1.0 / (1.0 - bar).sqrt()) as f32;
    tile_latent.zip_map(&tile_target, "oracle_noise", |z, z0| (z - a * z0) * inv)
}

/// Analytic predictor that drives the sampler exactly onto a target.
pub struct OraclePredictor {
    target: LatentCanvas,
    schedule: VarianceSchedule,
    cost: CostModel,
}

impl OraclePredictor {
    pub fn new(target: LatentCanvas, schedule: VarianceSchedule, cost: CostModel) -> Self {
        OraclePredictor {
            target,
            schedule,
            cost,
        }
    }

    pub fn target(&self) -> &LatentCanvas {
        &self.target
    }
}

impl NoisePredictor for OraclePredictor {
    fn predict(&self, req: &PredictRequest<'_>) -> Result<Prediction> {
        let noise = oracle_noise(
            req.tile_latent,
            req.timestep,
            req.tile_ref.origin_y,
            req.tile_ref.origin_x,
            &self.target,
            &self.schedule,
        )?;
        Ok(Prediction {
            noise,
            cost_units: self.cost.units_per_call,
        })
    }

    fn cost_model(&self) -> CostModel {
        self.cost
    }
}

/// Controls for the synthetic regional dynamics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DriftParams {
    /// Overall perturbation scale; 0 reduces the backend to the oracle.
    pub amplitude: f64,
    /// Foreground-to-background temporal rate ratio.
    pub fg_ratio: f64,
    /// Background temporal rate (output change per unit normalized timestep).
    pub rate: f64,
    /// Static checkerboard texture scale (background only), relative to
    /// `amplitude`; raises the noise standard deviation of static regions.
    pub texture: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams {
            amplitude: 0.05,
            fg_ratio: 4.0,
            rate: 2.0,
            texture: 0.5,
        }
    }
}

/// Oracle plus deterministic region-dependent perturbation.
pub struct DriftPredictor {
    target: LatentCanvas,
    schedule: VarianceSchedule,
    scene: SceneSpec,
    params: DriftParams,
    cost: CostModel,
}

impl DriftPredictor {
    pub fn new(
        target: LatentCanvas,
        schedule: VarianceSchedule,
        scene: SceneSpec,
        params: DriftParams,
        cost: CostModel,
    ) -> Self {
        DriftPredictor {
            target,
            schedule,
            scene,
            params,
            cost,
        }
    }

    /// Perturbation at global canvas coordinates and timestep `t`.
    ///
    /// Foreground elements ride a ramp that advances `fg_ratio` times faster
    /// per timestep than the background's; background elements instead carry
    /// a time-constant alternating texture.
    fn perturbation(&self, f: usize, c: usize, y: usize, x: usize, timestep: usize) -> f32 {
        let p = &self.params;
        if p.amplitude == 0.0 {
            return 0.0;
        }
        let ny = (y as f64 + 0.5) / self.target.height as f64;
        let nx = (x as f64 + 0.5) / self.target.width as f64;
        let fg = self.scene.in_foreground(f, ny, nx);
        let tau_t = timestep as f64 / self.schedule.len() as f64;
        let rate = if fg { p.rate * p.fg_ratio } else { p.rate };
        let mut v = p.amplitude * (1.0 + rate * tau_t);
        if !fg {
            let sign = if (f + c + y + x).is_multiple_of(2) {
                1.0
            } else {
                -1.0
            };
            v += p.amplitude * p.texture * sign;
        }
        v as f32
    }
}

impl NoisePredictor for DriftPredictor {
    fn predict(&self, req: &PredictRequest<'_>) -> Result<Prediction> {
        let mut out = oracle_noise(
            req.tile_latent,
            req.timestep,
            req.tile_ref.origin_y,
            req.tile_ref.origin_x,
            &self.target,
            &self.schedule,
        )?;
        let (h, w) = (self.target.height, self.target.width);
        let (oy, ox) = (req.tile_ref.origin_y, req.tile_ref.origin_x);
        for f in 0..out.frames {
            for c in 0..out.channels {
                for ty in 0..out.height {
                    let y = (oy + ty) % h;
                    for tx in 0..out.width {
                        let x = (ox + tx) % w;
                        let v = out.get(f, c, ty, tx) + self.perturbation(f, c, y, x, req.timestep);
                        out.set(f, c, ty, tx, v);
                    }
                }
            }
        }
        Ok(Prediction {
            noise: out,
            cost_units: self.cost.units_per_call,
        })
    }

    fn cost_model(&self) -> CostModel {
        self.cost
    }
}
