//! Tile-parallel step execution with a single end-of-step gather and
//! cache-guided workload rebalance.
//!
//! Within a step every worker owns a disjoint set of tiles. Recomputed
//! tiles call the predictor and are charged its cost units; reused tiles
//! evaluate the cached approximation at zero cost on their static owner.
//! After the last tile, one barrier-synchronized gather assembles the fused
//! noise field and makes every tile's cache metadata globally visible, so
//! each worker can independently derive the next step's decisions and an
//! identical assignment with no extra coordination.
//!
//! Assignments are deterministic by construction: the static layout is a
//! contiguous block partition by tile index, and the rebalanced layout is
//! longest-processing-time greedy over the non-skipped tiles (cost
//! descending, index ascending, ties to the lowest-loaded then lowest-id
//! worker). If greedy packing ever loses to the static layout it falls back
//! to it, so the rebalanced makespan never exceeds the static one.
//!
//! Scheduling never touches values: the fused canvas is bit-identical for
//! any worker count, with either executor, rebalance on or off.

use serde::{Deserialize, Serialize};

use crate::cache::{
    accumulate_path, adapt_threshold, approximate_output, decide, note_reuse, refresh_with_norm,
    CacheConfig, CacheLogLine, Decision, TileCacheState,
};
use crate::canvas::LatentCanvas;
use crate::error::{Error, Result};
use crate::predictor::{NoisePredictor, PredictRequest};
use crate::tiling::{fuse_noise, TileGrid, TileRef};

/// Per-step tile-to-worker map. Lists hold active (recomputing) tiles only;
/// skipped tiles are processed by their static owner at zero cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerAssignment {
    pub step: usize,
    pub per_worker: Vec<Vec<usize>>,
    pub est_cost: Vec<f64>,
}

impl WorkerAssignment {
    pub fn makespan(&self) -> f64 {
        self.est_cost.iter().copied().fold(0.0, f64::max)
    }
}

/// Contiguous block partition of all tiles; block sizes differ by at most 1.
pub fn static_partition(n_tiles: usize, n_workers: usize) -> Vec<Vec<usize>> {
    assert!(n_workers >= 1, "need at least one worker");
    let base = n_tiles / n_workers;
    let extra = n_tiles % n_workers;
    let mut blocks = Vec::with_capacity(n_workers);
    let mut next = 0;
    for w in 0..n_workers {
        let size = base + usize::from(w < extra);
        blocks.push((next..next + size).collect());
        next += size;
    }
    blocks
}

/// Static owner of a tile index under the block partition.
pub fn static_owner(tile: usize, n_tiles: usize, n_workers: usize) -> usize {
    let base = n_tiles / n_workers;
    let extra = n_tiles % n_workers;
    let boundary = extra * (base + 1);
    if tile < boundary {
        tile / (base + 1)
    } else {
        // base == 0 puts every tile below the boundary.
        extra + (tile - boundary) / base.max(1)
    }
}

fn assignment_costs(per_worker: &[Vec<usize>], cost_of: impl Fn(usize) -> f64) -> Vec<f64> {
    per_worker
        .iter()
        .map(|tiles| tiles.iter().map(|&t| cost_of(t)).sum())
        .collect()
}

/// Static layout filtered to the active tiles.
pub fn static_assignment(
    step: usize,
    n_tiles: usize,
    active: &[usize],
    costs: &[f64],
    n_workers: usize,
) -> WorkerAssignment {
    let is_active: Vec<bool> = {
        let mut v = vec![false; n_tiles];
        for &t in active {
            v[t] = true;
        }
        v
    };
    let cost_of = |t: usize| {
        active
            .iter()
            .position(|&a| a == t)
            .map_or(0.0, |i| costs[i])
    };
    let per_worker: Vec<Vec<usize>> = static_partition(n_tiles, n_workers)
        .into_iter()
        .map(|block| block.into_iter().filter(|&t| is_active[t]).collect())
        .collect();
    let est_cost = assignment_costs(&per_worker, cost_of);
    WorkerAssignment {
        step,
        per_worker,
        est_cost,
    }
}

/// Cache-guided rebalance: LPT greedy over the active tiles, falling back to
/// the static layout when greedy packing would be worse. Every rank computes
/// this identically from the gathered skip flags.
pub fn rebalance(
    step: usize,
    n_tiles: usize,
    active: &[usize],
    costs: &[f64],
    n_workers: usize,
) -> WorkerAssignment {
    assert_eq!(active.len(), costs.len(), "one cost per active tile");
    let mut order: Vec<usize> = (0..active.len()).collect();
    order.sort_by(|&a, &b| {
        costs[b]
            .partial_cmp(&costs[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(active[a].cmp(&active[b]))
    });
    let mut per_worker: Vec<Vec<usize>> = vec![Vec::new(); n_workers];
    let mut load = vec![0.0f64; n_workers];
    for i in order {
        let w = load
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(w, _)| w)
            .unwrap_or(0);
        per_worker[w].push(active[i]);
        load[w] += costs[i];
    }
    let lpt = WorkerAssignment {
        step,
        per_worker,
        est_cost: load,
    };
    let fallback = static_assignment(step, n_tiles, active, costs, n_workers);
    if lpt.makespan() <= fallback.makespan() {
        lpt
    } else {
        fallback
    }
}

/// What the end-of-step gather carries for one tile: the predicted (or
/// approximated) noise, the skip flag and the cache metadata every rank
/// needs to run the next step's decisions locally.
#[derive(Debug, Clone)]
pub struct GatherPacket {
    pub tile_index: usize,
    pub noise: LatentCanvas,
    pub skipped: bool,
    pub meta: CacheMeta,
}

/// Per-tile cache metadata exchanged at the step boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheMeta {
    pub anchor_step: Option<usize>,
    pub rate: Option<f64>,
    pub path_len: f64,
    pub sigma: Option<f64>,
    pub tau_i: f64,
}

/// Global cache view: one metadata entry per tile, identical on all workers.
pub fn exchange_cache_info(states: &[TileCacheState]) -> Vec<CacheMeta> {
    states
        .iter()
        .map(|s| CacheMeta {
            anchor_step: s.anchor_step,
            rate: s.rate,
            path_len: s.path_len,
            sigma: s.sigma,
            tau_i: s.tau_i,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutorMode {
    /// Simulated workers in one control flow; cost units only.
    Virtual,
    /// Real threads with a join barrier per step.
    Threads,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExecutorConfig {
    pub workers: usize,
    pub mode: ExecutorMode,
    pub rebalance: bool,
    /// When off, a tile whose processor changed since the previous step has
    /// lost its cache state and must recompute.
    pub exchange_cache_info: bool,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            workers: 1,
            mode: ExecutorMode::Virtual,
            rebalance: false,
            exchange_cache_info: true,
        }
    }
}

impl ExecutorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers must be >= 1"));
        }
        Ok(())
    }
}

/// Cache state for every tile plus the running sigma mean.
#[derive(Debug, Clone)]
pub struct CacheBank {
    pub config: CacheConfig,
    pub states: Vec<TileCacheState>,
    pub sigma_mean: Option<f64>,
    prev_processor: Vec<Option<usize>>,
}

impl CacheBank {
    pub fn new(n_tiles: usize, config: CacheConfig) -> Self {
        CacheBank {
            states: (0..n_tiles)
                .map(|_| TileCacheState::new(config.tau))
                .collect(),
            sigma_mean: None,
            prev_processor: vec![None; n_tiles],
            config,
        }
    }

    fn resize(&mut self, n_tiles: usize) {
        if self.states.len() != n_tiles {
            self.states = (0..n_tiles)
                .map(|_| TileCacheState::new(self.config.tau))
                .collect();
            self.prev_processor = vec![None; n_tiles];
            self.sigma_mean = None;
        }
    }
}

/// Everything `execute_step` needs to know about the current step.
pub struct StepContext<'a> {
    pub grid: &'a TileGrid,
    pub refs: &'a [TileRef],
    pub timestep: usize,
    /// Stage-local step index (0-based).
    pub step: usize,
    pub total_steps: usize,
    pub frames: usize,
    pub channels: usize,
    pub conditioning_id: u64,
    pub cache_enabled: bool,
}

/// Result of one executed step.
pub struct StepOutcome {
    pub fused: LatentCanvas,
    pub assignment: WorkerAssignment,
    pub per_worker_cost: Vec<f64>,
    pub makespan_units: f64,
    pub predictor_calls: usize,
    pub skipped: usize,
    pub gathers: usize,
    pub cache_log: Vec<CacheLogLine>,
    pub meta: Vec<CacheMeta>,
}

struct TileResult {
    tile: usize,
    noise: LatentCanvas,
    cost_units: f64,
}

/// Run one denoising step: decide per tile, execute recomputes across
/// workers, gather once, update cache state and thresholds.
pub fn execute_step(
    ctx: &StepContext<'_>,
    z_t: &LatentCanvas,
    bank: &mut CacheBank,
    backend: &dyn NoisePredictor,
    exec: &ExecutorConfig,
) -> Result<StepOutcome> {
    exec.validate()?;
    let n_tiles = ctx.refs.len();
    bank.resize(n_tiles);

    // Inputs and decisions, in tile-index order. Every worker could derive
    // these identically from the previous gather; computed once here.
    let mut inputs = Vec::with_capacity(n_tiles);
    let mut decisions = vec![Decision::Recompute; n_tiles];
    // Decide-time (k, L, tau_i) snapshots for the cache log.
    let mut decide_snap = vec![(None::<f64>, 0.0f64, bank.config.tau); n_tiles];
    for (i, r) in ctx.refs.iter().enumerate() {
        let input = z_t.slice(r.origin_y, r.origin_x, r.h, r.w, true)?;
        if ctx.cache_enabled {
            let state = &mut bank.states[i];
            if !state.matches_dims(&input) {
                state.reset(bank.config.tau);
            }
            if let Some(prev) = state.prev_input.clone() {
                state.path_len = accumulate_path(state.path_len, &input, &prev, bank.config.norm)?;
            }
            decisions[i] = decide(state, ctx.step, ctx.total_steps, &bank.config);
            decide_snap[i] = (state.rate, state.path_len, state.tau_i);
        }
        inputs.push(input);
    }

    let mut active: Vec<usize> = (0..n_tiles)
        .filter(|&i| decisions[i] == Decision::Recompute)
        .collect();

    let unit_cost = backend.cost_model().units_per_call;
    let costs_for = |active: &[usize]| -> Vec<f64> { vec![unit_cost; active.len()] };

    let mut assignment = if exec.rebalance {
        rebalance(
            ctx.step,
            n_tiles,
            &active,
            &costs_for(&active),
            exec.workers,
        )
    } else {
        static_assignment(
            ctx.step,
            n_tiles,
            &active,
            &costs_for(&active),
            exec.workers,
        )
    };

    // Processor of each tile this step: assigned worker when recomputing,
    // static owner when reusing.
    let mut processor = vec![0usize; n_tiles];
    for (w, tiles) in assignment.per_worker.iter().enumerate() {
        for &t in tiles {
            processor[t] = w;
        }
    }
    for i in 0..n_tiles {
        if decisions[i] == Decision::Reuse {
            processor[i] = static_owner(i, n_tiles, exec.workers);
        }
    }

    // Without the metadata exchange, state only lives where it was used
    // last step; a migrated tile starts cold and must recompute.
    if !exec.exchange_cache_info && ctx.cache_enabled {
        let mut flipped = Vec::new();
        for i in 0..n_tiles {
            if let Some(prev) = bank.prev_processor[i] {
                if prev != processor[i] {
                    bank.states[i].reset(bank.config.tau);
                    if decisions[i] == Decision::Reuse {
                        decisions[i] = Decision::Recompute;
                        flipped.push(i);
                    }
                }
            }
        }
        if !flipped.is_empty() {
            for &t in &flipped {
                let w = static_owner(t, n_tiles, exec.workers);
                processor[t] = w;
                assignment.per_worker[w].push(t);
                assignment.per_worker[w].sort_unstable();
                assignment.est_cost[w] += unit_cost;
            }
            active = (0..n_tiles)
                .filter(|&i| decisions[i] == Decision::Recompute)
                .collect();
        }
    }

    // Per-worker duty lists: recomputes from the assignment, reuses from
    // static ownership (charged zero units).
    let mut duties: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); exec.workers];
    for (w, tiles) in assignment.per_worker.iter().enumerate() {
        duties[w].0 = tiles.clone();
    }
    for i in 0..n_tiles {
        if decisions[i] == Decision::Reuse {
            duties[processor[i]].1.push(i);
        }
    }

    let stall_ms = backend.cost_model().stall_ms;
    let run_worker = |worker: &(Vec<usize>, Vec<usize>)| -> Result<(Vec<TileResult>, f64)> {
        let mut results = Vec::with_capacity(worker.0.len() + worker.1.len());
        let mut cost = 0.0f64;
        for &t in &worker.0 {
            if stall_ms > 0 {
                std::thread::sleep(std::time::Duration::from_millis(stall_ms));
            }
            let req = PredictRequest {
                tile_latent: &inputs[t],
                timestep: ctx.timestep,
                tile_ref: ctx.refs[t],
                conditioning_id: ctx.conditioning_id,
            };
            let pred = backend.predict(&req)?;
            cost += pred.cost_units;
            results.push(TileResult {
                tile: t,
                noise: pred.noise,
                cost_units: pred.cost_units,
            });
        }
        for &t in &worker.1 {
            let noise = approximate_output(&inputs[t], &bank.states[t])?;
            results.push(TileResult {
                tile: t,
                noise,
                cost_units: 0.0,
            });
        }
        Ok((results, cost))
    };

    let mut per_worker_cost = vec![0.0f64; exec.workers];
    let mut tile_results: Vec<Option<TileResult>> = (0..n_tiles).map(|_| None).collect();
    match exec.mode {
        ExecutorMode::Virtual => {
            for (w, duty) in duties.iter().enumerate() {
                let (results, cost) = run_worker(duty)?;
                per_worker_cost[w] = cost;
                for r in results {
                    place_result(&mut tile_results, r)?;
                }
            }
        }
        ExecutorMode::Threads => {
            let outcomes: Vec<Result<(Vec<TileResult>, f64)>> = std::thread::scope(|scope| {
                let handles: Vec<_> = duties
                    .iter()
                    .map(|duty| scope.spawn(|| run_worker(duty)))
                    .collect();
                // Join is the per-step barrier: no tile output is visible
                // anywhere until every worker has finished.
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker panicked"))
                    .collect()
            });
            for (w, outcome) in outcomes.into_iter().enumerate() {
                let (results, cost) = outcome?;
                per_worker_cost[w] = cost;
                for r in results {
                    place_result(&mut tile_results, r)?;
                }
            }
        }
    }

    // The single gather: assemble packets in tile-index order and fuse.
    let mut packets = Vec::with_capacity(n_tiles);
    for i in 0..n_tiles {
        let r = tile_results[i]
            .take()
            .ok_or_else(|| Error::Ownership(format!("tile {i} produced no output")))?;
        packets.push(GatherPacket {
            tile_index: i,
            noise: r.noise,
            skipped: decisions[i] == Decision::Reuse,
            meta: CacheMeta {
                anchor_step: bank.states[i].anchor_step,
                rate: bank.states[i].rate,
                path_len: bank.states[i].path_len,
                sigma: bank.states[i].sigma,
                tau_i: bank.states[i].tau_i,
            },
        });
        debug_assert!(r.cost_units >= 0.0);
    }
    let pairs: Vec<(TileRef, LatentCanvas)> = packets
        .iter()
        .map(|p| (ctx.refs[p.tile_index], p.noise.clone()))
        .collect();
    let fused = fuse_noise(&pairs, ctx.frames, ctx.channels, ctx.grid)?;

    // Post-barrier bookkeeping, identical on every rank.
    let mut cache_log = Vec::with_capacity(n_tiles);
    if ctx.cache_enabled {
        for i in 0..n_tiles {
            match decisions[i] {
                Decision::Recompute => refresh_with_norm(
                    &mut bank.states[i],
                    ctx.step,
                    &inputs[i],
                    &packets[i].noise,
                    bank.config.norm,
                )?,
                Decision::Reuse => note_reuse(&mut bank.states[i], &inputs[i], &packets[i].noise),
            }
        }
        let sigmas: Vec<f64> = bank.states.iter().filter_map(|s| s.sigma).collect();
        if !sigmas.is_empty() {
            let mean = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
            bank.sigma_mean = Some(mean);
            for s in bank.states.iter_mut() {
                if let Some(sigma) = s.sigma {
                    s.tau_i = adapt_threshold(sigma, mean, &bank.config);
                }
            }
        }
        for i in 0..n_tiles {
            bank.prev_processor[i] = Some(processor[i]);
            // k, L and tau as seen by the decision; sigma from this step.
            cache_log.push(CacheLogLine {
                step: ctx.step,
                tile: i,
                decision: decisions[i],
                k: decide_snap[i].0,
                l_acc: decide_snap[i].1,
                sigma: bank.states[i].sigma,
                tau_i: decide_snap[i].2,
            });
        }
    }

    let skipped = decisions.iter().filter(|&&d| d == Decision::Reuse).count();
    let meta = exchange_cache_info(&bank.states);
    Ok(StepOutcome {
        fused,
        assignment,
        makespan_units: per_worker_cost.iter().copied().fold(0.0, f64::max),
        per_worker_cost,
        predictor_calls: active.len(),
        skipped,
        gathers: 1,
        cache_log,
        meta,
    })
}

fn place_result(slots: &mut [Option<TileResult>], r: TileResult) -> Result<()> {
    let i = r.tile;
    if slots[i].is_some() {
        return Err(Error::Ownership(format!("tile {i} computed twice")));
    }
    slots[i] = Some(r);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_partition_block_sizes() {
        let blocks = static_partition(9, 4);
        let sizes: Vec<usize> = blocks.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 2, 2, 2]);
        assert_eq!(blocks[0], vec![0, 1, 2]);

        let sizes: Vec<usize> = static_partition(9, 8).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 1, 1, 1, 1, 1, 1, 1]);

        let sizes: Vec<usize> = static_partition(4, 4).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1, 1, 1, 1]);
    }

    #[test]
    fn static_owner_matches_partition() {
        for (n_tiles, n_workers) in [(9, 4), (9, 8), (4, 4), (7, 3), (5, 6)] {
            let blocks = static_partition(n_tiles, n_workers);
            for (w, block) in blocks.iter().enumerate() {
                for &t in block {
                    assert_eq!(
                        static_owner(t, n_tiles, n_workers),
                        w,
                        "{n_tiles}/{n_workers}"
                    );
                }
            }
        }
    }

    #[test]
    fn rebalance_uniform_examples() {
        let active: Vec<usize> = (0..9).collect();
        let costs = vec![1.0; 9];
        let a = rebalance(0, 9, &active, &costs, 4);
        assert_eq!(a.makespan(), 3.0);

        // One skipped tile: eight actives pack into makespan 2.
        let active: Vec<usize> = (0..9).filter(|&t| t != 4).collect();
        let costs = vec![1.0; 8];
        let a = rebalance(0, 9, &active, &costs, 4);
        assert_eq!(a.makespan(), 2.0);

        // Static keeps makespan 3 in the same situation unless the skip
        // lands in the large block.
        let s = static_assignment(0, 9, &active, &costs, 4);
        assert_eq!(s.makespan(), 3.0);
    }

    #[test]
    fn rebalance_never_loses_to_static() {
        // Exhaustive over small shapes with adversarial cost vectors; the
        // oracle enumerates every possible assignment for the true optimum.
        let cost_choices = [1.0, 2.0, 3.0];
        for n_tiles in 1..=6usize {
            for n_workers in 1..=3usize {
                let mut combo = vec![0usize; n_tiles];
                loop {
                    let costs: Vec<f64> = combo.iter().map(|&i| cost_choices[i]).collect();
                    let active: Vec<usize> = (0..n_tiles).collect();
                    let reb = rebalance(0, n_tiles, &active, &costs, n_workers);
                    let sta = static_assignment(0, n_tiles, &active, &costs, n_workers);
                    assert!(
                        reb.makespan() <= sta.makespan() + 1e-9,
                        "rebalance {} > static {} for costs {costs:?} on {n_tiles}/{n_workers}",
                        reb.makespan(),
                        sta.makespan()
                    );
                    let opt = brute_force_optimal(&costs, n_workers);
                    assert!(reb.makespan() + 1e-9 >= opt);

                    // Next cost combination.
                    let mut pos = 0;
                    loop {
                        if pos == n_tiles {
                            break;
                        }
                        combo[pos] += 1;
                        if combo[pos] < cost_choices.len() {
                            break;
                        }
                        combo[pos] = 0;
                        pos += 1;
                    }
                    if pos == n_tiles {
                        break;
                    }
                }
            }
        }
    }

    fn brute_force_optimal(costs: &[f64], n_workers: usize) -> f64 {
        let n = costs.len();
        let mut best = f64::INFINITY;
        let total = n_workers.pow(n as u32);
        for mask in 0..total {
            let mut load = vec![0.0f64; n_workers];
            let mut m = mask;
            for c in costs {
                load[m % n_workers] += c;
                m /= n_workers;
            }
            best = best.min(load.iter().copied().fold(0.0, f64::max));
        }
        best
    }

    #[test]
    fn rebalance_deterministic_tie_breaking() {
        let active = vec![0, 1, 2, 3];
        let costs = vec![1.0; 4];
        let a = rebalance(0, 4, &active, &costs, 2);
        let b = rebalance(0, 4, &active, &costs, 2);
        assert_eq!(a.per_worker, b.per_worker);
        // Equal costs: tiles assigned in index order, alternating workers.
        assert_eq!(a.per_worker[0], vec![0, 2]);
        assert_eq!(a.per_worker[1], vec![1, 3]);
    }

    #[test]
    fn exchange_view_covers_all_tiles() {
        let states: Vec<TileCacheState> = (0..5).map(|_| TileCacheState::new(0.09)).collect();
        let view = exchange_cache_info(&states);
        assert_eq!(view.len(), 5);
    }

    use crate::canvas::{LatentCanvas, Space};
    use crate::predictor::{CostModel, NoisePredictor, PredictRequest, Prediction};
    use crate::tiling::{tiles_at_step, ShiftMode, TileGrid};

    struct UnitPredictor;

    impl NoisePredictor for UnitPredictor {
        fn predict(&self, req: &PredictRequest<'_>) -> crate::error::Result<Prediction> {
            Ok(Prediction {
                noise: req.tile_latent.map(|v| v * 0.5),
                cost_units: 1.0,
            })
        }

        fn cost_model(&self) -> CostModel {
            CostModel::default()
        }
    }

    fn run_one_step(workers: usize, mode: ExecutorMode, cache_enabled: bool) -> StepOutcome {
        let grid = TileGrid::new(24, 24, 8, 8, 16, ShiftMode::Wrap).unwrap();
        let refs = tiles_at_step(&grid, 0);
        let z = LatentCanvas::from_fn(1, 1, 24, 24, Space::Latent, |_, _, y, x| {
            (y * 24 + x) as f32 * 0.01
        });
        let mut bank = CacheBank::new(grid.n_tiles(), crate::cache::CacheConfig::default());
        let ctx = StepContext {
            grid: &grid,
            refs: &refs,
            timestep: 40,
            step: 0,
            total_steps: 10,
            frames: 1,
            channels: 1,
            conditioning_id: 0,
            cache_enabled,
        };
        let exec = ExecutorConfig {
            workers,
            mode,
            rebalance: false,
            exchange_cache_info: true,
        };
        execute_step(&ctx, &z, &mut bank, &UnitPredictor, &exec).unwrap()
    }

    #[test]
    fn one_worker_charges_one_unit_per_tile_call() {
        // Nine tiles at 1.0 units each on a single worker: 9.0 total.
        let outcome = run_one_step(1, ExecutorMode::Virtual, false);
        assert_eq!(outcome.per_worker_cost, vec![9.0]);
        assert_eq!(outcome.predictor_calls, 9);
        assert_eq!(outcome.makespan_units, 9.0);
        assert_eq!(outcome.gathers, 1);
    }

    #[test]
    fn executors_and_worker_counts_agree_bitwise() {
        let reference = run_one_step(1, ExecutorMode::Virtual, true);
        for workers in [2usize, 4] {
            for mode in [ExecutorMode::Virtual, ExecutorMode::Threads] {
                let outcome = run_one_step(workers, mode, true);
                assert_eq!(
                    outcome.fused.data(),
                    reference.fused.data(),
                    "workers {workers}, mode {mode:?}"
                );
                assert_eq!(outcome.gathers, 1);
            }
        }
    }

    #[test]
    fn static_partition_makespan_nine_over_four() {
        let outcome = run_one_step(4, ExecutorMode::Virtual, false);
        // Blocks (3,2,2,2) at unit cost.
        assert_eq!(outcome.per_worker_cost, vec![3.0, 2.0, 2.0, 2.0]);
        assert_eq!(outcome.makespan_units, 3.0);
    }
}
