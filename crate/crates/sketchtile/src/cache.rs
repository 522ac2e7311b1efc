//! Per-tile inter-step residual caching with drift bounding, plus the
//! intra-step region-aware threshold adaptation.
//!
//! At the last recomputed ("anchor") step `c` a tile stores the residual
//! `delta_c = O_c - I_c` between its predicted noise and its input latent.
//! Later steps may skip the predictor and approximate `O_t = I_t + delta_c`
//! as long as the estimated accumulated drift stays below the tile's threshold:
//! the transformation rate `k_c = |O_c - O_{c-1}| / |I_c - I_{c-1}|` times
//! the latent path length `L = sum |I_k - I_{k-1}|` since the anchor must
//! satisfy `k_c * L < tau_i`. On recompute the anchor moves to the current
//! step and the path length resets.
//!
//! Thresholds adapt per tile to regional dynamics: a higher standard
//! deviation of the freshly predicted noise marks a more static region and
//! earns a larger threshold, `tau_i = clip(tau * (1 + s * (sigma_i -
//! sigma_mean) / sigma_mean))`, clipped to `[0.5 tau, 2 tau]`.
//!
//! Norms are per-element means (`L1` = mean absolute value, `L2` = RMS) so
//! thresholds are independent of tile size; all accumulation is in f64.

use serde::{Deserialize, Serialize};

use crate::canvas::LatentCanvas;
use crate::error::{Error, Result};

/// Norm used for rates and path lengths, normalized by element count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    /// Mean absolute value (L1) or root mean square (L2), in f64.
    pub fn of(&self, c: &LatentCanvas) -> f64 {
        let n = c.len().max(1) as f64;
        match self {
            Norm::L1 => c.data().iter().map(|&v| f64::from(v).abs()).sum::<f64>() / n,
            Norm::L2 => (c
                .data()
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                / n)
                .sqrt(),
        }
    }

    pub fn of_diff(&self, a: &LatentCanvas, b: &LatentCanvas) -> Result<f64> {
        Ok(self.of(&a.sub(b)?))
    }
}

/// Guard below which an input delta counts as stationary.
pub const STATIONARY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CacheConfig {
    pub enabled: bool,
    /// Base reuse threshold.
    pub tau: f64,
    /// Region-aware scale factor; 0 disables the adaptation.
    pub scale_factor: f64,
    /// Leading steps that always recompute.
    pub warmup_skip: usize,
    /// Trailing steps that always recompute.
    pub tail_skip: usize,
    pub norm: Norm,
    pub tau_min_mult: f64,
    pub tau_max_mult: f64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            enabled: true,
            tau: 0.09,
            scale_factor: 0.3,
            warmup_skip: 3,
            tail_skip: 2,
            norm: Norm::L1,
            tau_min_mult: 0.5,
            tau_max_mult: 2.0,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau < 0.0 || self.scale_factor < 0.0 {
            return Err(Error::config("cache tau and scale factor must be >= 0"));
        }
        if self.tau_min_mult < 0.0 || self.tau_max_mult < self.tau_min_mult {
            return Err(Error::config(
                "cache clip multipliers must satisfy 0 <= min <= max",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Reuse,
    Recompute,
}

/// Cache state owned by one tile.
#[derive(Debug, Clone, Default)]
pub struct TileCacheState {
    /// Anchor step `c`, set at the last recompute.
    pub anchor_step: Option<usize>,
    pub anchor_input: Option<LatentCanvas>,
    pub anchor_output: Option<LatentCanvas>,
    /// `O_c - I_c`.
    pub delta: Option<LatentCanvas>,
    /// Transformation rate `k_c`; undefined until two computed steps exist.
    pub rate: Option<f64>,
    /// Latent path length since the anchor.
    pub path_len: f64,
    pub prev_input: Option<LatentCanvas>,
    pub prev_output: Option<LatentCanvas>,
    /// Standard deviation of the most recent freshly predicted noise.
    pub sigma: Option<f64>,
    /// Per-tile threshold; starts at the base tau.
    pub tau_i: f64,
}

impl TileCacheState {
    pub fn new(tau: f64) -> Self {
        TileCacheState {
            tau_i: tau,
            ..Default::default()
        }
    }

    /// Drop everything; used when a tile's geometry changes (clamp-mode
    /// shifting) or when its state was lost to a disabled exchange.
    pub fn reset(&mut self, tau: f64) {
        *self = TileCacheState::new(tau);
    }

    /// Whether the stored tiles match the given dims.
    pub fn matches_dims(&self, tile: &LatentCanvas) -> bool {
        self.prev_input.as_ref().is_none_or(|p| p.same_dims(tile))
            && self.anchor_input.as_ref().is_none_or(|p| p.same_dims(tile))
    }
}

/// Residual between predicted noise and input latent.
pub fn residual(output: &LatentCanvas, input: &LatentCanvas) -> Result<LatentCanvas> {
    output.sub(input)
}

/// Transformation rate `k = |O_t - O_prev| / |I_t - I_prev|`.
///
/// A stationary input (`|I_t - I_prev|` below [`STATIONARY_EPS`]) keeps the
/// previous rate rather than dividing.
pub fn transformation_rate(
    o_t: &LatentCanvas,
    o_prev: &LatentCanvas,
    i_t: &LatentCanvas,
    i_prev: &LatentCanvas,
    norm: Norm,
    prev_rate: Option<f64>,
) -> Result<Option<f64>> {
    let input_change = norm.of_diff(i_t, i_prev)?;
    if input_change < STATIONARY_EPS {
        return Ok(prev_rate);
    }
    let output_change = norm.of_diff(o_t, o_prev)?;
    Ok(Some(output_change / input_change))
}

/// Accumulate the latent path length: `L' = L + |I_t - I_prev|`.
pub fn accumulate_path(
    path_len: f64,
    i_t: &LatentCanvas,
    i_prev: &LatentCanvas,
    norm: Norm,
) -> Result<f64> {
    Ok(path_len + norm.of_diff(i_t, i_prev)?)
}

/// Reuse-or-recompute rule: reuse iff an anchor and a rate exist, the step
/// lies outside the warmup/tail windows and `k_c * L < tau_i` strictly.
pub fn decide(
    state: &TileCacheState,
    step: usize,
    total_steps: usize,
    config: &CacheConfig,
) -> Decision {
    if step < config.warmup_skip {
        return Decision::Recompute;
    }
    if step + config.tail_skip >= total_steps {
        return Decision::Recompute;
    }
    let (Some(_), Some(rate)) = (state.anchor_step, state.rate) else {
        return Decision::Recompute;
    };
    if state.delta.is_none() {
        return Decision::Recompute;
    }
    if rate * state.path_len < state.tau_i {
        Decision::Reuse
    } else {
        Decision::Recompute
    }
}

/// Cached approximation `O_t = I_t + delta_c`; costs zero predictor units.
pub fn approximate_output(i_t: &LatentCanvas, state: &TileCacheState) -> Result<LatentCanvas> {
    let delta = state
        .delta
        .as_ref()
        .ok_or_else(|| Error::CacheState("approximate_output without an anchor".to_string()))?;
    i_t.add(delta)
}

/// Population standard deviation over all tile elements.
pub fn tile_noise_std(o_t: &LatentCanvas) -> f64 {
    let n = o_t.len().max(1) as f64;
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    for &v in o_t.data() {
        let v = f64::from(v);
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / n;
    (sumsq / n - mean * mean).max(0.0).sqrt()
}

/// Region-aware threshold: affine in the normalized sigma deviation,
/// clipped symmetrically. Equal to `tau` when `sigma_i == sigma_mean` and
/// monotone non-decreasing in `sigma_i`.
pub fn adapt_threshold(sigma_i: f64, sigma_mean: f64, config: &CacheConfig) -> f64 {
    if sigma_mean <= 0.0 {
        return config.tau;
    }
    let raw = config.tau * (1.0 + config.scale_factor * (sigma_i - sigma_mean) / sigma_mean);
    raw.clamp(
        config.tau * config.tau_min_mult,
        config.tau * config.tau_max_mult,
    )
}

/// Move the anchor to a freshly computed step.
///
/// Updates the rate against the previous step's pair before overwriting it,
/// stores the new residual and sigma, and resets the path length.
pub fn refresh(
    state: &mut TileCacheState,
    step: usize,
    i_t: &LatentCanvas,
    o_t: &LatentCanvas,
) -> Result<()> {
    refresh_with_norm(state, step, i_t, o_t, Norm::L1)
}

/// [`refresh`] honoring the configured norm for the rate update.
pub fn refresh_with_norm(
    state: &mut TileCacheState,
    step: usize,
    i_t: &LatentCanvas,
    o_t: &LatentCanvas,
    norm: Norm,
) -> Result<()> {
    if let (Some(pi), Some(po)) = (&state.prev_input, &state.prev_output) {
        if pi.same_dims(i_t) {
            state.rate = transformation_rate(o_t, po, i_t, pi, norm, state.rate)?;
        }
    }
    state.anchor_step = Some(step);
    state.anchor_input = Some(i_t.clone());
    state.anchor_output = Some(o_t.clone());
    state.delta = Some(residual(o_t, i_t)?);
    state.path_len = 0.0;
    state.sigma = Some(tile_noise_std(o_t));
    state.prev_input = Some(i_t.clone());
    state.prev_output = Some(o_t.clone());
    Ok(())
}

/// Record a reused step: the anchor stays, only the previous pair moves.
pub fn note_reuse(state: &mut TileCacheState, i_t: &LatentCanvas, o_t: &LatentCanvas) {
    state.prev_input = Some(i_t.clone());
    state.prev_output = Some(o_t.clone());
}

/// One line of the per-run cache log (JSON lines).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheLogLine {
    pub step: usize,
    pub tile: usize,
    pub decision: Decision,
    pub k: Option<f64>,
    pub l_acc: f64,
    pub sigma: Option<f64>,
    pub tau_i: f64,
}
