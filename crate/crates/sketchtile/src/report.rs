//! Per-step and aggregate run records.
//!
//! A [`RunReport`] is fully deterministic for a fixed config and seed except
//! for the segregated [`Timing`] block; [`RunReport::canonical_json`] strips
//! it so byte-level comparisons of two runs stay meaningful.

use serde::{Deserialize, Serialize};

use crate::cache::Decision;
use crate::error::Result;
use crate::metrics::Fidelity;
use crate::parallel::WorkerAssignment;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileStepInfo {
    pub decision: Decision,
    pub k: Option<f64>,
    pub l_acc: f64,
    pub sigma: Option<f64>,
    pub tau_i: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub timestep: usize,
    pub shift: (usize, usize),
    pub tiles: Vec<TileStepInfo>,
    pub assignment: WorkerAssignment,
    pub per_worker_cost: Vec<f64>,
    pub makespan_units: f64,
    pub gathers: usize,
    pub predictor_calls: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunTotals {
    pub predictor_calls: usize,
    pub skipped_tiles: usize,
    pub cost_units: f64,
    /// Sum of stage-2 step makespans: the run's effective latency in units.
    pub makespan_units: f64,
    pub gathers: usize,
}

/// Wall-clock measurements, segregated from the deterministic payload.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub wall_ms: u128,
    pub stage1_ms: u128,
    pub stage2_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config_digest: String,
    pub output_digest: String,
    pub steps: Vec<StepReport>,
    pub totals: RunTotals,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<FidelitySummary>,
    pub timing: Timing,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelitySummary {
    pub psnr_db: f64,
    pub ssim: f64,
    pub rel_l1: f64,
    pub cos_sim: f64,
    pub bit_exact: bool,
}

impl From<Fidelity> for FidelitySummary {
    fn from(f: Fidelity) -> Self {
        FidelitySummary {
            psnr_db: f.psnr_db,
            ssim: f.ssim,
            rel_l1: f.rel_l1,
            cos_sim: f.cos_sim,
            bit_exact: f.bit_exact,
        }
    }
}

impl RunReport {
    /// JSON with the wall-time fields zeroed; identical configs and seeds
    /// must produce byte-identical output here.
    pub fn canonical_json(&self) -> Result<String> {
        let mut clone = self.clone();
        clone.timing = Timing::default();
        Ok(serde_json::to_string_pretty(&clone)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Decision sequence across all steps and tiles, for replay comparisons.
    pub fn decision_sequence(&self) -> Vec<(usize, usize, Decision)> {
        let mut seq = Vec::new();
        for s in &self.steps {
            for (tile, info) in s.tiles.iter().enumerate() {
                seq.push((s.step, tile, info.decision));
            }
        }
        seq
    }

    /// Scheduling log: one JSON line per step.
    pub fn scheduling_log(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.steps {
            let line = serde_json::json!({
                "step": s.step,
                "assignment": s.assignment.per_worker,
                "skips": s.tiles.iter().map(|t| t.decision == Decision::Reuse).collect::<Vec<_>>(),
                "per_worker_cost": s.per_worker_cost,
                "makespan": s.makespan_units,
            });
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn digest_hex(d: u64) -> String {
    format!("{d:016x}")
}
