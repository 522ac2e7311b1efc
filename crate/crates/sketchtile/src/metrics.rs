//! Similarity and fidelity metrics.
//!
//! `rel_l1` and `cos_sim` follow the adjacent-step similarity definitions
//! used by the cache profiling path (`|a - b|_1 / |b|_1` and the usual
//! normalized inner product). PSNR is `10 log10(range^2 / MSE)` capped at
//! 99 dB; SSIM is the windowed structural similarity with uniform 8x8
//! non-overlapping windows and the original K1/K2 constants, averaged over
//! windows, frames and channels. All accumulation is in f64.

use serde::Serialize;

use crate::cache::Norm;
use crate::canvas::LatentCanvas;
use crate::error::{Error, Result};

/// Cap applied to PSNR so identical inputs report a finite score.
pub const PSNR_CAP_DB: f64 = 99.0;

fn check_dims(a: &LatentCanvas, b: &LatentCanvas, op: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!(
            "{op}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Relative L1 distance `|a - b|_1 / |b|_1`.
pub fn rel_l1(a: &LatentCanvas, b: &LatentCanvas) -> Result<f64> {
    check_dims(a, b, "rel_l1")?;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        num += f64::from(x - y).abs();
        den += f64::from(y).abs();
    }
    if den <= f64::EPSILON {
        return Err(Error::UndefinedMetric(
            "rel_l1 reference has zero L1 norm".to_string(),
        ));
    }
    Ok(num / den)
}

/// Cosine similarity `<a,b> / (|a|_2 |b|_2)` in `[-1, 1]`.
pub fn cos_sim(a: &LatentCanvas, b: &LatentCanvas) -> Result<f64> {
    check_dims(a, b, "cos_sim")?;
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        dot += f64::from(x) * f64::from(y);
        na += f64::from(x) * f64::from(x);
        nb += f64::from(y) * f64::from(y);
    }
    if na <= 0.0 || nb <= 0.0 {
        return Err(Error::UndefinedMetric(
            "cos_sim on a zero vector".to_string(),
        ));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &LatentCanvas, b: &LatentCanvas, data_range: f64) -> Result<f64> {
    check_dims(a, b, "psnr")?;
    if data_range <= 0.0 {
        return Err(Error::config("psnr data_range must be positive"));
    }
    let mut se = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = f64::from(x) - f64::from(y);
        se += d * d;
    }
    let mse = se / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP_DB))
}

/// Windowed structural similarity, uniform non-overlapping windows.
pub fn ssim(
    a: &LatentCanvas,
    b: &LatentCanvas,
    window: usize,
    k1: f64,
    k2: f64,
    data_range: f64,
) -> Result<f64> {
    check_dims(a, b, "ssim")?;
    if window == 0 || a.height < window || a.width < window {
        return Err(Error::dim(format!(
            "ssim window {window} does not fit canvas {}x{}",
            a.height, a.width
        )));
    }
    let c1 = (k1 * data_range).powi(2);
    let c2 = (k2 * data_range).powi(2);
    let wy = a.height / window;
    let wx = a.width / window;
    let n = (window * window) as f64;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for f in 0..a.frames {
        for c in 0..a.channels {
            for by in 0..wy {
                for bx in 0..wx {
                    let mut sa = 0.0f64;
                    let mut sb = 0.0f64;
                    let mut saa = 0.0f64;
                    let mut sbb = 0.0f64;
                    let mut sab = 0.0f64;
                    for dy in 0..window {
                        for dx in 0..window {
                            let y = by * window + dy;
                            let x = bx * window + dx;
                            let va = f64::from(a.get(f, c, y, x));
                            let vb = f64::from(b.get(f, c, y, x));
                            sa += va;
                            sb += vb;
                            saa += va * va;
                            sbb += vb * vb;
                            sab += va * vb;
                        }
                    }
                    let mu_a = sa / n;
                    let mu_b = sb / n;
                    let var_a = saa / n - mu_a * mu_a;
                    let var_b = sbb / n - mu_b * mu_b;
                    let cov = sab / n - mu_a * mu_b;
                    let score = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                    total += score;
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}

/// Default-parameter SSIM (window 8, K1 = 0.01, K2 = 0.03).
pub fn ssim_default(a: &LatentCanvas, b: &LatentCanvas, data_range: f64) -> Result<f64> {
    ssim(a, b, 8, 0.01, 0.03, data_range)
}

/// Fidelity summary between two canvases (unit data range).
#[derive(Debug, Clone, Serialize)]
pub struct Fidelity {
    pub psnr_db: f64,
    pub ssim: f64,
    pub rel_l1: f64,
    pub cos_sim: f64,
    pub bit_exact: bool,
}

pub fn fidelity(a: &LatentCanvas, b: &LatentCanvas) -> Result<Fidelity> {
    Ok(Fidelity {
        psnr_db: psnr(a, b, 1.0)?,
        ssim: ssim_default(a, b, 1.0)?,
        rel_l1: rel_l1(a, b)?,
        cos_sim: cos_sim(a, b)?,
        bit_exact: a.data() == b.data(),
    })
}

/// One row of the adjacent-step similarity profile.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileRow {
    pub step: usize,
    pub rel_l1_o: f64,
    pub cos_o: f64,
    pub rel_l1_delta: f64,
    pub cos_delta: f64,
    pub k: f64,
}

/// Adjacent-step similarity of predicted noise `O_t`, cache residual
/// `delta_t = O_t - I_t` and transformation rate `k_t`, from a sequence of
/// per-step `(step, input canvas, output canvas)` triples.
///
/// Consecutive triples must share dimensions (one stage at a time).
pub fn similarity_profile(
    entries: &[(usize, LatentCanvas, LatentCanvas)],
    norm: Norm,
) -> Result<Vec<ProfileRow>> {
    let mut rows = Vec::new();
    for pair in entries.windows(2) {
        let (_, ref i_prev, ref o_prev) = pair[0];
        let (step, ref i_cur, ref o_cur) = pair[1];
        check_dims(i_cur, i_prev, "similarity_profile")?;
        let delta_prev = o_prev.sub(i_prev)?;
        let delta_cur = o_cur.sub(i_cur)?;
        let i_change = norm.of(&i_cur.sub(i_prev)?);
        let o_change = norm.of(&o_cur.sub(o_prev)?);
        rows.push(ProfileRow {
            step,
            rel_l1_o: rel_l1(o_cur, o_prev)?,
            cos_o: cos_sim(o_cur, o_prev)?,
            rel_l1_delta: rel_l1(&delta_cur, &delta_prev)?,
            cos_delta: cos_sim(&delta_cur, &delta_prev)?,
            k: if i_change > 1e-12 {
                o_change / i_change
            } else {
                f64::NAN
            },
        });
    }
    Ok(rows)
}

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let mut out = String::from("step,relL1_O,cos_O,relL1_delta,cos_delta,k\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
            r.step, r.rel_l1_o, r.cos_o, r.rel_l1_delta, r.cos_delta, r.k
        ));
    }
    out
}
