//! The two-stage generation loop.
//!
//! Stage 1 samples a low-resolution sketch with the full-canvas predictor
//! (no tiling, no cache). The sketch is decoded to pixel space, upscaled by
//! bicubic interpolation, re-encoded and re-noised with a seed-derived
//! Gaussian field to the timestep that leaves `renoise_steps` sampling steps
//! remaining. Stage 2 then runs those steps tile-aware: shift the grid,
//! predict or reuse per tile, fuse the holistic noise field, and apply one
//! scheduler update to the whole canvas. Tiles never see the scheduler
//! update individually, so element-wise locality keeps the tiled loop
//! bit-identical to untiled sampling when the grid is degenerate.
//!
//! Everything is keyed off the run seed through named streams; two runs with
//! the same config produce byte-identical latents and reports.

use std::sync::Arc;
use std::time::Instant;

use crate::canvas::{bicubic_resize, LatentCanvas, Space};
use crate::config::{BackendSpec, RunConfig};
use crate::error::{Error, Result};
use crate::parallel::{execute_step, CacheBank, ExecutorConfig, StepContext};
use crate::predictor::{
    CostModel, DriftPredictor, NoisePredictor, OraclePredictor, PredictRequest, SceneSpec,
    FULL_CANVAS_TILE,
};
use crate::report::{digest_hex, RunReport, RunTotals, StepReport, TileStepInfo, Timing};
use crate::rng;
use crate::schedule::{
    build_schedule, forward_noise, reverse_step, TimestepPlan, VarianceSchedule,
};
use crate::tiling::{shift_offset, tiles_with_offset, TileGrid, TileRef};
use crate::trace::{RecordingPredictor, ReplayPredictor, Trace, TraceSink};

/// Final canvases plus the run record.
pub struct RunArtifacts {
    pub final_latent: LatentCanvas,
    pub pixels: LatentCanvas,
    pub report: RunReport,
}

/// Accumulates call/cost counters across both stages.
#[derive(Debug, Default)]
pub struct CostLedger {
    pub calls: usize,
    pub units: f64,
}

pub struct Pipeline {
    config: RunConfig,
    schedule: VarianceSchedule,
    plan: TimestepPlan,
    scene: SceneSpec,
    low_target: LatentCanvas,
    full_target: LatentCanvas,
    conditioning_id: u64,
    replay: Option<Arc<ReplayPredictor>>,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Pipeline> {
        config.validate()?;
        let schedule = build_schedule(
            config.schedule_kind,
            config.schedule_steps,
            config.beta_start,
            config.beta_end,
        )?;
        let plan = TimestepPlan::uniform(schedule.len(), config.sampling_steps, config.eta)?;
        let scene = config.scene.build();
        scene.validate()?;
        let low_target = scene.render_target(
            config.frames,
            config.channels,
            config.low_height,
            config.low_width,
        );
        let full_target = scene.render_target(
            config.frames,
            config.channels,
            config.target_height,
            config.target_width,
        );
        let replay = match (&config.backend, &config.trace_replay) {
            (BackendSpec::Replay, Some(path)) => {
                let trace = Trace::load(path)?;
                if trace.config_digest != config.digest() {
                    return Err(Error::Replay {
                        step: 0,
                        tile: 0,
                        msg: format!(
                            "trace recorded under config digest {:016x}, current is {:016x}",
                            trace.config_digest,
                            config.digest()
                        ),
                    });
                }
                Some(Arc::new(ReplayPredictor::new(trace)))
            }
            _ => None,
        };
        let conditioning_id = scene.conditioning_id();
        Ok(Pipeline {
            config,
            schedule,
            plan,
            scene,
            low_target,
            full_target,
            conditioning_id,
            replay,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn schedule(&self) -> &VarianceSchedule {
        &self.schedule
    }

    pub fn plan(&self) -> &TimestepPlan {
        &self.plan
    }

    pub fn scene(&self) -> &SceneSpec {
        &self.scene
    }

    /// Ground-truth target at full resolution (what the oracle drives to).
    pub fn full_target(&self) -> &LatentCanvas {
        &self.full_target
    }

    pub fn low_target(&self) -> &LatentCanvas {
        &self.low_target
    }

    pub fn grid(&self) -> Result<TileGrid> {
        TileGrid::new(
            self.config.target_height,
            self.config.target_width,
            self.config.tile_height,
            self.config.tile_width,
            self.config.loop_step,
            self.config.shift_mode,
        )
    }

    /// Backend driving stage 1 (low-resolution target), without recording.
    pub fn stage1_backend(&self) -> Box<dyn NoisePredictor> {
        self.backend_for(&self.low_target, None)
    }

    /// Backend driving stage 2 (full-resolution target), without recording.
    pub fn stage2_backend(&self) -> Box<dyn NoisePredictor> {
        self.backend_for(&self.full_target, None)
    }

    fn backend_for(
        &self,
        target: &LatentCanvas,
        sink: Option<Arc<TraceSink>>,
    ) -> Box<dyn NoisePredictor> {
        let cost = CostModel {
            units_per_call: self.config.cost.units_per_call,
            stall_ms: self.config.cost.stall_ms,
        };
        let inner: Box<dyn NoisePredictor> = match self.config.backend {
            BackendSpec::Oracle => Box::new(OraclePredictor::new(
                target.clone(),
                self.schedule.clone(),
                cost,
            )),
            BackendSpec::Drift => Box::new(DriftPredictor::new(
                target.clone(),
                self.schedule.clone(),
                self.scene.clone(),
                self.config.drift,
                cost,
            )),
            BackendSpec::Replay => Box::new(
                self.replay
                    .as_ref()
                    .expect("replay predictor loaded at construction")
                    .clone(),
            ),
        };
        match sink {
            Some(sink) => Box::new(RecordingPredictor::new(inner, sink)),
            None => inner,
        }
    }

    /// Untiled sampling loop over plan positions `start_pos..`.
    ///
    /// Drives the reference path for the tiling-degeneracy check and the
    /// whole of stage 1.
    pub fn sample_plain(
        &self,
        mut z: LatentCanvas,
        start_pos: usize,
        backend: &dyn NoisePredictor,
        ledger: &mut CostLedger,
        eta_label: &str,
    ) -> Result<LatentCanvas> {
        for pos in start_pos..self.plan.len() {
            let t = self.plan.timesteps[pos];
            let tile_ref = TileRef {
                index: FULL_CANVAS_TILE,
                origin_y: 0,
                origin_x: 0,
                h: z.height,
                w: z.width,
                step: pos,
            };
            let req = PredictRequest {
                tile_latent: &z,
                timestep: t,
                tile_ref,
                conditioning_id: self.conditioning_id,
            };
            let pred = backend.predict(&req).map_err(|e| {
                Error::config(format!("predictor failed at plan position {pos}: {e}"))
            })?;
            ledger.calls += 1;
            ledger.units += pred.cost_units;
            let noise = self.eta_noise(&z, eta_label, pos)?;
            z = reverse_step(
                &z,
                &pred.noise,
                t,
                self.plan.prev_of(pos),
                &self.schedule,
                self.plan.eta,
                noise.as_ref(),
            )?;
        }
        Ok(z)
    }

    fn eta_noise(
        &self,
        like: &LatentCanvas,
        label: &str,
        pos: usize,
    ) -> Result<Option<LatentCanvas>> {
        if self.plan.eta == 0.0 {
            return Ok(None);
        }
        let mut stream = rng::stream(self.config.seed, &format!("{label}-{pos}"));
        let mut noise = LatentCanvas::zeros(
            like.frames,
            like.channels,
            like.height,
            like.width,
            like.space,
        );
        rng::fill_normal(&mut stream, noise.data_mut());
        Ok(Some(noise))
    }

    /// Stage 1: sample the low-resolution sketch from seeded noise.
    pub fn generate_stage1(
        &self,
        backend: &dyn NoisePredictor,
        ledger: &mut CostLedger,
    ) -> Result<LatentCanvas> {
        let mut z = LatentCanvas::zeros(
            self.config.frames,
            self.config.channels,
            self.config.low_height,
            self.config.low_width,
            Space::Latent,
        );
        let mut stream = rng::stream(self.config.seed, "stage1-init");
        rng::fill_normal(&mut stream, z.data_mut());
        self.sample_plain(z, 0, backend, ledger, "eta-stage1")
    }

    /// Decode, upscale in pixel space, re-encode, re-noise.
    ///
    /// Returns the stage-2 starting latent and the plan position it sits at:
    /// the position with `renoise_steps` sampling steps remaining.
    pub fn upscale_and_renoise(&self, low_latent: &LatentCanvas) -> Result<(LatentCanvas, usize)> {
        let factor = self.config.codec.factor;
        let pixels = self.config.codec.decode(low_latent)?;
        let upscaled = bicubic_resize(
            &pixels,
            self.config.target_height * factor,
            self.config.target_width * factor,
        )?;
        let encoded = self.config.codec.encode(&upscaled)?;
        let start_pos = self.plan.len() - self.config.renoise_steps;
        let t_start = self.plan.timesteps[start_pos];
        let mut eps = LatentCanvas::zeros(
            encoded.frames,
            encoded.channels,
            encoded.height,
            encoded.width,
            Space::Latent,
        );
        let mut stream = rng::stream(self.config.seed, "stage2-renoise");
        rng::fill_normal(&mut stream, eps.data_mut());
        let z_start = forward_noise(&encoded, t_start, &eps, &self.schedule)?;
        Ok((z_start, start_pos))
    }

    /// Stage 2: shifted tile-aware denoising with fusion and one scheduler
    /// update per step.
    pub fn run_stage2(
        &self,
        mut z: LatentCanvas,
        start_pos: usize,
        backend: &dyn NoisePredictor,
        ledger: &mut CostLedger,
    ) -> Result<(LatentCanvas, Vec<StepReport>)> {
        let grid = self.grid()?;
        let exec = ExecutorConfig {
            workers: self.config.workers,
            mode: self.config.executor,
            rebalance: self.config.rebalance,
            exchange_cache_info: self.config.exchange,
        };
        let mut bank = CacheBank::new(grid.n_tiles(), self.config.cache);
        let total_steps = self.plan.len() - start_pos;
        let mut steps = Vec::with_capacity(total_steps);
        for local in 0..total_steps {
            let pos = start_pos + local;
            let t = self.plan.timesteps[pos];
            let shift_index = match self.config.shift_every {
                0 => 0,
                every => local / every,
            };
            let (dy, dx) = shift_offset(shift_index, &grid);
            let refs = tiles_with_offset(&grid, dy, dx, local);
            let ctx = StepContext {
                grid: &grid,
                refs: &refs,
                timestep: t,
                step: local,
                total_steps,
                frames: self.config.frames,
                channels: self.config.channels,
                conditioning_id: self.conditioning_id,
                cache_enabled: self.config.cache.enabled,
            };
            let outcome = execute_step(&ctx, &z, &mut bank, backend, &exec)
                .map_err(|e| Error::config(format!("stage-2 step {local} failed: {e}")))?;
            ledger.calls += outcome.predictor_calls;
            ledger.units += outcome.per_worker_cost.iter().sum::<f64>();
            let noise = self.eta_noise(&z, "eta-stage2", pos)?;
            z = reverse_step(
                &z,
                &outcome.fused,
                t,
                self.plan.prev_of(pos),
                &self.schedule,
                self.plan.eta,
                noise.as_ref(),
            )?;
            let tiles: Vec<TileStepInfo> = match outcome.cache_log.is_empty() {
                false => outcome
                    .cache_log
                    .iter()
                    .map(|l| TileStepInfo {
                        decision: l.decision,
                        k: l.k,
                        l_acc: l.l_acc,
                        sigma: l.sigma,
                        tau_i: l.tau_i,
                    })
                    .collect(),
                true => refs
                    .iter()
                    .map(|_| TileStepInfo {
                        decision: crate::cache::Decision::Recompute,
                        k: None,
                        l_acc: 0.0,
                        sigma: None,
                        tau_i: self.config.cache.tau,
                    })
                    .collect(),
            };
            steps.push(StepReport {
                step: local,
                timestep: t,
                shift: (dy, dx),
                tiles,
                assignment: outcome.assignment,
                per_worker_cost: outcome.per_worker_cost,
                makespan_units: outcome.makespan_units,
                gathers: outcome.gathers,
                predictor_calls: outcome.predictor_calls,
                skipped: outcome.skipped,
            });
        }
        Ok((z, steps))
    }

    /// Full run: sketch, upscale and re-noise, tile-aware refinement,
    /// decode, report.
    pub fn generate(&self) -> Result<RunArtifacts> {
        let wall = Instant::now();
        let sink = self.config.trace_record.as_ref().map(|_| TraceSink::new());

        let stage1_backend = self.backend_for(&self.low_target, sink.clone());
        let mut ledger = CostLedger::default();
        let t1 = Instant::now();
        let low = self.generate_stage1(stage1_backend.as_ref(), &mut ledger)?;
        let stage1_ms = t1.elapsed().as_millis();

        let (z_start, start_pos) = self.upscale_and_renoise(&low)?;

        let stage2_backend = self.backend_for(&self.full_target, sink.clone());
        let t2 = Instant::now();
        let (final_latent, steps) =
            self.run_stage2(z_start, start_pos, stage2_backend.as_ref(), &mut ledger)?;
        let stage2_ms = t2.elapsed().as_millis();

        if let (Some(sink), Some(path)) = (&sink, &self.config.trace_record) {
            sink.save(self.config.digest(), path)?;
        }

        let pixels = self.config.codec.decode(&final_latent)?;
        let totals = RunTotals {
            predictor_calls: ledger.calls,
            skipped_tiles: steps.iter().map(|s| s.skipped).sum(),
            cost_units: ledger.units,
            makespan_units: steps.iter().map(|s| s.makespan_units).sum(),
            gathers: steps.iter().map(|s| s.gathers).sum(),
        };
        let report = RunReport {
            schema_version: 1,
            config_digest: digest_hex(self.config.digest()),
            output_digest: digest_hex(final_latent.digest()),
            steps,
            totals,
            fidelity: None,
            timing: Timing {
                wall_ms: wall.elapsed().as_millis(),
                stage1_ms,
                stage2_ms,
            },
        };
        Ok(RunArtifacts {
            final_latent,
            pixels,
            report,
        })
    }
}
