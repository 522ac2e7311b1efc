//! Property tests for the structural invariants: schedule monotonicity,
//! noising round-trips, element-wise locality of the reverse update, exact
//! tile coverage, fuse/extract inversion, monotone cache reuse and
//! threshold adaptation bounds.

use proptest::prelude::*;

use sketchtile::cache::{adapt_threshold, decide, residual, CacheConfig, Decision, TileCacheState};
use sketchtile::canvas::{LatentCanvas, Space};
use sketchtile::metrics::{cos_sim, psnr, rel_l1, ssim_default, PSNR_CAP_DB};
use sketchtile::rng;
use sketchtile::schedule::{build_schedule, forward_noise, predict_z0, reverse_step, ScheduleKind};
use sketchtile::tiling::{
    coverage_mask, extract_tiles, fuse_noise, tiles_at_step, ShiftMode, TileGrid, TileRef,
};

fn random_canvas(seed: u64, f: usize, c: usize, h: usize, w: usize) -> LatentCanvas {
    let mut r = rng::stream(seed, "prop");
    let mut canvas = LatentCanvas::zeros(f, c, h, w, Space::Latent);
    rng::fill_normal(&mut r, canvas.data_mut());
    canvas
}

proptest! {
    #[test]
    fn schedule_alpha_bar_strictly_decreasing(
        t_count in 1usize..400,
        kind in prop_oneof![Just(ScheduleKind::Linear), Just(ScheduleKind::Cosine)],
        beta_start in 1e-5f64..5e-3,
        spread in 1.0f64..50.0,
    ) {
        let beta_end = (beta_start * spread).min(0.999);
        let s = build_schedule(kind, t_count, beta_start, beta_end).unwrap();
        for t in 0..t_count {
            prop_assert!(s.beta[t] > 0.0 && s.beta[t] < 1.0);
            prop_assert!((s.alpha[t] - (1.0 - s.beta[t])).abs() < 1e-15);
            if t > 0 {
                prop_assert!(s.alpha_bar[t] < s.alpha_bar[t - 1]);
            }
        }
        prop_assert!(s.alpha_bar[t_count - 1] > 0.0);
    }

    #[test]
    fn forward_then_predict_is_identity(seed in 0u64..1000, t in 0usize..200) {
        let s = build_schedule(ScheduleKind::Linear, 200, 1e-4, 0.02).unwrap();
        let z0 = random_canvas(seed, 1, 2, 8, 8);
        let eps = random_canvas(seed + 5000, 1, 2, 8, 8);
        let z_t = forward_noise(&z0, t, &eps, &s).unwrap();
        let back = predict_z0(&z_t, &eps, t, &s).unwrap();
        for (a, b) in back.data().iter().zip(z0.data()) {
            let rel = (a - b).abs() / b.abs().max(1.0);
            prop_assert!(rel < 1e-5, "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn reverse_step_is_elementwise_local(
        seed in 0u64..1000,
        step in 0usize..40,
        t_pair in (1usize..200).prop_flat_map(|t| (Just(t), 0..t)),
    ) {
        // Applying the reverse update per-tile and fusing must equal
        // applying it to the fused canvas, bit-exact. This is what lets the
        // pipeline fuse noise before the scheduler update.
        let (t, t_prev) = t_pair;
        let s = build_schedule(ScheduleKind::Linear, 200, 1e-4, 0.02).unwrap();
        let grid = TileGrid::new(12, 16, 6, 8, 5, ShiftMode::Wrap).unwrap();
        let z = random_canvas(seed, 2, 1, 12, 16);
        let eps = random_canvas(seed + 9000, 2, 1, 12, 16);

        let whole = reverse_step(&z, &eps, t, Some(t_prev), &s, 0.0, None).unwrap();

        let refs = tiles_at_step(&grid, step);
        let z_tiles = extract_tiles(&z, &refs).unwrap();
        let e_tiles = extract_tiles(&eps, &refs).unwrap();
        let pairs: Vec<(TileRef, LatentCanvas)> = refs
            .iter()
            .zip(z_tiles.iter().zip(e_tiles.iter()))
            .map(|(r, (zt, et))| {
                (*r, reverse_step(zt, et, t, Some(t_prev), &s, 0.0, None).unwrap())
            })
            .collect();
        let fused = fuse_noise(&pairs, 2, 1, &grid).unwrap();
        prop_assert_eq!(fused.data(), whole.data());
    }

    #[test]
    fn tile_coverage_is_exact(
        grid_y in 1usize..5,
        grid_x in 1usize..5,
        tile_h in 1usize..12,
        tile_w in 1usize..12,
        loop_step in 1usize..20,
        step in 0usize..64,
        wrap in any::<bool>(),
    ) {
        let mode = if wrap { ShiftMode::Wrap } else { ShiftMode::Clamp };
        let grid = TileGrid::new(
            grid_y * tile_h,
            grid_x * tile_w,
            tile_h,
            tile_w,
            loop_step,
            mode,
        ).unwrap();
        let refs = tiles_at_step(&grid, step);
        let mask = coverage_mask(&grid, &refs);
        prop_assert!(mask.iter().all(|&c| c == 1));
    }

    #[test]
    fn fuse_inverts_extract(seed in 0u64..500, step in 0usize..32) {
        let grid = TileGrid::new(12, 12, 4, 6, 7, ShiftMode::Wrap).unwrap();
        let canvas = random_canvas(seed, 1, 3, 12, 12);
        let refs = tiles_at_step(&grid, step);
        let tiles = extract_tiles(&canvas, &refs).unwrap();
        let pairs: Vec<(TileRef, LatentCanvas)> = refs.into_iter().zip(tiles).collect();
        let fused = fuse_noise(&pairs, 1, 3, &grid).unwrap();
        prop_assert_eq!(fused.data(), canvas.data());
    }

    #[test]
    fn reuse_is_monotone_in_threshold(
        rate in 0.0f64..4.0,
        path_len in 0.0f64..2.0,
        tau_lo in 0.0f64..0.5,
        bump in 1e-6f64..0.5,
        step in 4usize..40,
    ) {
        let config = CacheConfig::default();
        let i = LatentCanvas::filled(1, 1, 2, 2, Space::Latent, 1.0);
        let o = LatentCanvas::filled(1, 1, 2, 2, Space::Latent, 1.5);
        let mut state = TileCacheState::new(tau_lo);
        state.anchor_step = Some(0);
        state.anchor_input = Some(i.clone());
        state.anchor_output = Some(o.clone());
        state.delta = Some(residual(&o, &i).unwrap());
        state.rate = Some(rate);
        state.path_len = path_len;
        state.tau_i = tau_lo;
        let lo = decide(&state, step, 45, &config);
        state.tau_i = tau_lo + bump;
        let hi = decide(&state, step, 45, &config);
        if lo == Decision::Reuse {
            prop_assert_eq!(hi, Decision::Reuse);
        }
    }

    #[test]
    fn adapt_threshold_bounded_and_centered(
        sigma in 0.0f64..20.0,
        mean in 1e-6f64..10.0,
        tau in 0.0f64..0.5,
        scale in 0.0f64..2.0,
    ) {
        let config = CacheConfig {
            tau,
            scale_factor: scale,
            ..CacheConfig::default()
        };
        let tau_i = adapt_threshold(sigma, mean, &config);
        prop_assert!(tau_i >= tau * config.tau_min_mult - 1e-12);
        prop_assert!(tau_i <= tau * config.tau_max_mult + 1e-12);
        let centered = adapt_threshold(mean, mean, &config);
        prop_assert!((centered - tau).abs() < 1e-12);
        // Monotone in sigma.
        let higher = adapt_threshold(sigma + 0.5, mean, &config);
        prop_assert!(higher >= tau_i - 1e-12);
    }

    #[test]
    fn metric_bounds(seed in 0u64..300) {
        let a = random_canvas(seed, 1, 1, 8, 8);
        let b = random_canvas(seed + 1000, 1, 1, 8, 8);
        prop_assert!(rel_l1(&a, &b).unwrap() >= 0.0);
        prop_assert_eq!(rel_l1(&a, &a).unwrap(), 0.0);
        let c = cos_sim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        prop_assert!((ssim_default(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let s = ssim_default(&a, &b, 1.0).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}
