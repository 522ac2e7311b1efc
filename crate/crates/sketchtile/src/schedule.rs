//! Variance schedules and the element-wise diffusion sampling math.
//!
//! The forward process closes over the noising chain as
//! `z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps`, where
//! `abar_t = prod_{k<=t} (1 - beta_k)`. The reverse update is the
//! deterministic DDIM form: predict `z0` from the noise estimate, then jump
//! to the previous plan timestep. With `eta = 0` the whole loop is a pure
//! function of its inputs; `eta > 0` adds a caller-supplied seeded noise
//! field scaled by the DDIM sigma.
//!
//! Schedule coefficients are kept in f64 and cast to f32 once per step, so
//! per-tile and whole-canvas applications of the same step are bit-identical.

use serde::{Deserialize, Serialize};

use crate::canvas::LatentCanvas;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Per-timestep `beta`, `alpha = 1 - beta` and cumulative `alpha_bar`.
#[derive(Debug, Clone)]
pub struct VarianceSchedule {
    pub kind: ScheduleKind,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl VarianceSchedule {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::config(format!(
                "timestep {t} out of range for schedule of length {}",
                self.len()
            )));
        }
        Ok(())
    }

    /// `alpha_bar` at a plan position, where `None` denotes the clean
    /// endpoint (`alpha_bar = 1`).
    fn alpha_bar_at(&self, t: Option<usize>) -> f64 {
        match t {
            Some(t) => self.alpha_bar[t],
            None => 1.0,
        }
    }
}

/// Build a schedule of `t_count` steps.
///
/// Linear: `beta` interpolates `beta_start..=beta_end`. Cosine: the standard
/// squared-cosine `alpha_bar` profile (`s = 0.008`) with per-step beta
/// clamped to `0.999`; beta bounds are ignored.
pub fn build_schedule(
    kind: ScheduleKind,
    t_count: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<VarianceSchedule> {
    if t_count == 0 {
        return Err(Error::config("schedule length must be >= 1"));
    }
    let beta: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
                return Err(Error::config(format!(
                    "linear schedule requires 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
                )));
            }
            if t_count == 1 {
                vec![beta_start]
            } else {
                (0..t_count)
                    .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_count - 1) as f64)
                    .collect()
            }
        }
        ScheduleKind::Cosine => {
            const S: f64 = 0.008;
            let f = |u: f64| {
                ((u + S) / (1.0 + S) * std::f64::consts::FRAC_PI_2)
                    .cos()
                    .powi(2)
            };
            let f0 = f(0.0);
            let mut prev_bar = 1.0;
            (0..t_count)
                .map(|t| {
                    let bar = f((t + 1) as f64 / t_count as f64) / f0;
                    let b = (1.0 - bar / prev_bar).clamp(1e-8, 0.999);
                    prev_bar = bar;
                    b
                })
                .collect()
        }
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_count);
    let mut acc = 1.0f64;
    for &a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    Ok(VarianceSchedule {
        kind,
        beta,
        alpha,
        alpha_bar,
    })
}

/// The subset of schedule indices a sampling run actually visits, in
/// strictly decreasing order and ending at 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimestepPlan {
    pub timesteps: Vec<usize>,
    pub eta: f64,
}

impl TimestepPlan {
    /// Uniform-stride subset of a schedule: `steps` entries, last one 0.
    pub fn uniform(schedule_len: usize, steps: usize, eta: f64) -> Result<TimestepPlan> {
        if steps == 0 || steps > schedule_len {
            return Err(Error::config(format!(
                "sampling steps must be in 1..={schedule_len}, got {steps}"
            )));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::config(format!("eta must be in [0,1], got {eta}")));
        }
        let timesteps: Vec<usize> = (0..steps).map(|i| i * schedule_len / steps).rev().collect();
        Ok(TimestepPlan { timesteps, eta })
    }

    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    /// Plan timestep after position `pos`, `None` once the loop exits to z0.
    pub fn prev_of(&self, pos: usize) -> Option<usize> {
        self.timesteps.get(pos + 1).copied()
    }
}

/// Closed-form forward noising to timestep `t`.
pub fn forward_noise(
    z0: &LatentCanvas,
    t: usize,
    eps: &LatentCanvas,
    sched: &VarianceSchedule,
) -> Result<LatentCanvas> {
    sched.check_t(t)?;
    let bar = sched.alpha_bar[t];
    let a = bar.sqrt() as f32;
    let b = (1.0 - bar).sqrt() as f32;
    z0.zip_map(eps, "forward_noise", |z, e| a * z + b * e)
}

/// Reparameterize the clean sample from a noise estimate:
/// `z0_hat = (z_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)`.
pub fn predict_z0(
    z_t: &LatentCanvas,
    eps_hat: &LatentCanvas,
    t: usize,
    sched: &VarianceSchedule,
) -> Result<LatentCanvas> {
    sched.check_t(t)?;
    let bar = sched.alpha_bar[t];
    if bar <= 0.0 {
        return Err(Error::Singularity(format!(
            "predict_z0 at t={t}: alpha_bar is zero"
        )));
    }
    let inv = (1.0 / bar.sqrt()) as f32;
    let b = (1.0 - bar).sqrt() as f32;
    z_t.zip_map(eps_hat, "predict_z0", |z, e| (z - b * e) * inv)
}

/// One deterministic (or eta-scaled) DDIM update from `t` to `t_prev`.
///
/// `t_prev = None` denotes the final output `z0_hat`. For `eta > 0` the
/// caller supplies the noise field; it is scaled by the DDIM sigma.
pub fn reverse_step(
    z_t: &LatentCanvas,
    eps_hat: &LatentCanvas,
    t: usize,
    t_prev: Option<usize>,
    sched: &VarianceSchedule,
    eta: f64,
    noise: Option<&LatentCanvas>,
) -> Result<LatentCanvas> {
    sched.check_t(t)?;
    if let Some(p) = t_prev {
        if p >= t {
            return Err(Error::Ordering {
                t,
                t_prev: p as i64,
            });
        }
    }
    let z0_hat = predict_z0(z_t, eps_hat, t, sched)?;
    let Some(_) = t_prev else {
        return Ok(z0_hat);
    };
    let bar_t = sched.alpha_bar[t];
    let bar_prev = sched.alpha_bar_at(t_prev);

    let sigma = if eta > 0.0 {
        eta * ((1.0 - bar_prev) / (1.0 - bar_t) * (1.0 - bar_t / bar_prev)).sqrt()
    } else {
        0.0
    };
    let dir = (1.0 - bar_prev - sigma * sigma).max(0.0).sqrt() as f32;
    let a = bar_prev.sqrt() as f32;
    let mut out = z0_hat.zip_map(eps_hat, "reverse_step", |z0, e| a * z0 + dir * e)?;
    if sigma > 0.0 {
        let noise = noise.ok_or_else(|| {
            Error::config("reverse_step with eta > 0 requires a noise field".to_string())
        })?;
        let s = sigma as f32;
        out = out.zip_map(noise, "reverse_step noise", |v, n| v + s * n)?;
    }
    Ok(out)
}
