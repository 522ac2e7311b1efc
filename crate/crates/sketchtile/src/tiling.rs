//! Non-overlapping tile decomposition with deterministic per-step shifting.
//!
//! The canvas is covered exactly once by a fixed grid of `tile_h x tile_w`
//! tiles. Each step the whole grid translates by
//! `((step mod L) * floor(tile_h / L), (step mod L) * floor(tile_w / L))`,
//! so the pattern repeats every `L` steps ("loop step"). In `wrap` mode the
//! canvas is treated as a torus and every tile stays full-sized; in `clamp`
//! mode edge tiles shrink and a remainder row/column appears whenever the
//! offset is nonzero. Either way the union of tiles covers each canvas
//! element exactly once, which is what lets per-tile noise predictions be
//! fused back into a holistic field by plain placement.

use serde::{Deserialize, Serialize};

use crate::canvas::LatentCanvas;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftMode {
    Wrap,
    Clamp,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TileGrid {
    pub canvas_h: usize,
    pub canvas_w: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub grid_y: usize,
    pub grid_x: usize,
    /// Number of steps after which the shift pattern repeats.
    pub loop_step: usize,
    pub shift_mode: ShiftMode,
}

impl TileGrid {
    pub fn new(
        canvas_h: usize,
        canvas_w: usize,
        tile_h: usize,
        tile_w: usize,
        loop_step: usize,
        shift_mode: ShiftMode,
    ) -> Result<TileGrid> {
        if tile_h == 0 || tile_w == 0 || canvas_h == 0 || canvas_w == 0 {
            return Err(Error::config("tile and canvas dims must be >= 1"));
        }
        if !canvas_h.is_multiple_of(tile_h) || !canvas_w.is_multiple_of(tile_w) {
            return Err(Error::config(format!(
                "tiles {tile_h}x{tile_w} must cover canvas {canvas_h}x{canvas_w} exactly"
            )));
        }
        if loop_step == 0 {
            return Err(Error::config("loop_step must be >= 1"));
        }
        Ok(TileGrid {
            canvas_h,
            canvas_w,
            tile_h,
            tile_w,
            grid_y: canvas_h / tile_h,
            grid_x: canvas_w / tile_w,
            loop_step,
            shift_mode,
        })
    }

    pub fn n_tiles(&self) -> usize {
        self.grid_y * self.grid_x
    }
}

/// One tile position, valid for a single denoising step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRef {
    pub index: usize,
    pub origin_y: usize,
    pub origin_x: usize,
    pub h: usize,
    pub w: usize,
    pub step: usize,
}

/// Grid translation at a step: strides quantized to whole latent units.
pub fn shift_offset(step: usize, grid: &TileGrid) -> (usize, usize) {
    let l = grid.loop_step;
    let stride_y = grid.tile_h / l;
    let stride_x = grid.tile_w / l;
    let phase = step % l;
    (
        (phase * stride_y) % grid.tile_h,
        (phase * stride_x) % grid.tile_w,
    )
}

/// Tile set for a step. Wrap mode always yields `grid_y * grid_x` full-size
/// tiles with toroidal origins; clamp mode splits at the offset boundaries,
/// growing an extra row/column of remainder tiles when the offset is nonzero.
pub fn tiles_at_step(grid: &TileGrid, step: usize) -> Vec<TileRef> {
    let (dy, dx) = shift_offset(step, grid);
    tiles_with_offset(grid, dy, dx, step)
}

pub fn tiles_with_offset(grid: &TileGrid, dy: usize, dx: usize, step: usize) -> Vec<TileRef> {
    match grid.shift_mode {
        ShiftMode::Wrap => {
            let mut refs = Vec::with_capacity(grid.n_tiles());
            for gy in 0..grid.grid_y {
                for gx in 0..grid.grid_x {
                    refs.push(TileRef {
                        index: gy * grid.grid_x + gx,
                        origin_y: (gy * grid.tile_h + dy) % grid.canvas_h,
                        origin_x: (gx * grid.tile_w + dx) % grid.canvas_w,
                        h: grid.tile_h,
                        w: grid.tile_w,
                        step,
                    });
                }
            }
            refs
        }
        ShiftMode::Clamp => {
            let cuts = |n: usize, tile: usize, off: usize| -> Vec<(usize, usize)> {
                let mut edges = vec![0usize];
                let mut p = off % tile;
                if p == 0 {
                    p = tile;
                }
                while p < n {
                    edges.push(p);
                    p += tile;
                }
                edges.push(n);
                edges.windows(2).map(|w| (w[0], w[1] - w[0])).collect()
            };
            let rows = cuts(grid.canvas_h, grid.tile_h, dy);
            let cols = cuts(grid.canvas_w, grid.tile_w, dx);
            let mut refs = Vec::with_capacity(rows.len() * cols.len());
            let mut index = 0;
            for &(oy, h) in &rows {
                for &(ox, w) in &cols {
                    refs.push(TileRef {
                        index,
                        origin_y: oy,
                        origin_x: ox,
                        h,
                        w,
                        step,
                    });
                    index += 1;
                }
            }
            refs
        }
    }
}

/// Extract every tile of a step from a canvas (wrap-aware).
pub fn extract_tiles(canvas: &LatentCanvas, refs: &[TileRef]) -> Result<Vec<LatentCanvas>> {
    refs.iter()
        .map(|r| canvas.slice(r.origin_y, r.origin_x, r.h, r.w, true))
        .collect()
}

/// Fuse per-tile outputs into a canvas-shaped field.
///
/// Placement happens in tile-index order and every element must be written
/// exactly once; a missing or doubly-covered element is a fusion error.
pub fn fuse_noise(
    tile_outputs: &[(TileRef, LatentCanvas)],
    frames: usize,
    channels: usize,
    grid: &TileGrid,
) -> Result<LatentCanvas> {
    let mut out = LatentCanvas::zeros(
        frames,
        channels,
        grid.canvas_h,
        grid.canvas_w,
        crate::canvas::Space::Latent,
    );
    let mut cover = vec![0u8; grid.canvas_h * grid.canvas_w];
    let mut ordered: Vec<&(TileRef, LatentCanvas)> = tile_outputs.iter().collect();
    ordered.sort_by_key(|(r, _)| r.index);
    for (r, tile) in ordered {
        if tile.height != r.h
            || tile.width != r.w
            || tile.frames != frames
            || tile.channels != channels
        {
            return Err(Error::Fusion(format!(
                "tile {} output dims {:?} do not match its reference {}x{}",
                r.index,
                tile.dims(),
                r.h,
                r.w
            )));
        }
        for ty in 0..r.h {
            let y = (r.origin_y + ty) % grid.canvas_h;
            for tx in 0..r.w {
                let x = (r.origin_x + tx) % grid.canvas_w;
                let c = &mut cover[y * grid.canvas_w + x];
                if *c != 0 {
                    return Err(Error::Fusion(format!(
                        "element ({y},{x}) written by more than one tile (second writer: {})",
                        r.index
                    )));
                }
                *c = 1;
            }
        }
        out.place(tile, r.origin_y, r.origin_x, true)?;
    }
    if cover.contains(&0) {
        return Err(Error::Fusion("fusion left uncovered elements".to_string()));
    }
    Ok(out)
}

/// Coverage counts per canvas element for a tile set (test/verification aid).
pub fn coverage_mask(grid: &TileGrid, refs: &[TileRef]) -> Vec<u32> {
    let mut mask = vec![0u32; grid.canvas_h * grid.canvas_w];
    for r in refs {
        for ty in 0..r.h {
            let y = (r.origin_y + ty) % grid.canvas_h;
            for tx in 0..r.w {
                let x = (r.origin_x + tx) % grid.canvas_w;
                mask[y * grid.canvas_w + x] += 1;
            }
        }
    }
    mask
}
