//! Seed derivation and Gaussian sampling.
//!
//! Every random field in the engine comes from a ChaCha8 stream keyed by
//! `(base seed, label)`. Labels separate the streams (stage-1 init noise,
//! stage-2 re-noise, eta noise per step, scene synthesis) so that changing
//! one consumer never shifts another. The label hash is FNV-1a, fixed here
//! rather than taken from `std` so streams are stable across toolchains.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive an independent stream seed from a base seed and a label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = fnv1a64(label.as_bytes());
    for &b in base.to_le_bytes().iter() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Seeded generator for one named stream.
pub fn stream(base: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, label))
}

/// Uniform sample in `(0, 1]` (never exactly zero, so `ln` is safe).
fn uniform_open(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64
}

/// One standard-normal sample via Box-Muller.
///
/// Self-contained so the byte stream -> value mapping is pinned by this
/// crate alone; distribution crates may change algorithms between versions.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f32 {
    let u1 = uniform_open(rng);
    let u2 = uniform_open(rng);
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
}

/// Fill a buffer with standard-normal samples.
pub fn fill_normal(rng: &mut ChaCha8Rng, out: &mut [f32]) {
    for v in out.iter_mut() {
        *v = standard_normal(rng);
    }
}
