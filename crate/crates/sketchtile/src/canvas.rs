//! The 4-D latent/pixel container and its spatial operations.
//!
//! A [`LatentCanvas`] holds `frames x channels x height x width` values in
//! row-major order. The same container carries latents, predicted noise and
//! decoded pixels; the [`Space`] tag tracks which side of the codec the data
//! lives on. A [`Codec`] stands in for the VAE: `identity` passes data
//! through, `avgpool` mean-pools spatially on encode and replicates blocks
//! on decode.
//!
//! Bicubic resizing is Catmull-Rom (`a = -0.5`) with clamp-to-edge sampling
//! and half-pixel-center coordinate mapping, applied per frame and channel.
//! Spatial resizing never touches the frame axis.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the codec a canvas lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Latent,
    Pixel,
}

/// Dense 4-D field of `f32` values, row-major `(frame, channel, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCanvas {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub space: Space,
    data: Vec<f32>,
}

impl LatentCanvas {
    pub fn zeros(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        space: Space,
    ) -> Self {
        Self::filled(frames, channels, height, width, space, 0.0)
    }

    pub fn filled(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        space: Space,
        value: f32,
    ) -> Self {
        LatentCanvas {
            frames,
            channels,
            height,
            width,
            space,
            data: vec![value; frames * channels * height * width],
        }
    }

    /// Build from a per-element function of `(frame, channel, y, x)`.
    pub fn from_fn(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        space: Space,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(frames * channels * height * width);
        for fr in 0..frames {
            for c in 0..channels {
                for y in 0..height {
                    for x in 0..width {
                        data.push(f(fr, c, y, x));
                    }
                }
            }
        }
        LatentCanvas {
            frames,
            channels,
            height,
            width,
            space,
            data,
        }
    }

    pub fn from_vec(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        space: Space,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != frames * channels * height * width {
            return Err(Error::dim(format!(
                "data length {} does not match {}x{}x{}x{}",
                data.len(),
                frames,
                channels,
                height,
                width
            )));
        }
        Ok(LatentCanvas {
            frames,
            channels,
            height,
            width,
            space,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    fn idx(&self, f: usize, c: usize, y: usize, x: usize) -> usize {
        ((f * self.channels + c) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, f: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(f, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, f: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.idx(f, c, y, x);
        self.data[i] = v;
    }

    pub fn same_dims(&self, other: &LatentCanvas) -> bool {
        self.dims() == other.dims()
    }

    fn require_same_dims(&self, other: &LatentCanvas, op: &str) -> Result<()> {
        if !self.same_dims(other) {
            return Err(Error::dim(format!(
                "{op}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// Element-wise combination into a new canvas.
    pub fn zip_map(
        &self,
        other: &LatentCanvas,
        op: &str,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<LatentCanvas> {
        self.require_same_dims(other, op)?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(LatentCanvas {
            data,
            ..self.clone_shape()
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> LatentCanvas {
        LatentCanvas {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone_shape()
        }
    }

    fn clone_shape(&self) -> LatentCanvas {
        LatentCanvas {
            frames: self.frames,
            channels: self.channels,
            height: self.height,
            width: self.width,
            space: self.space,
            data: Vec::new(),
        }
    }

    pub fn add(&self, other: &LatentCanvas) -> Result<LatentCanvas> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &LatentCanvas) -> Result<LatentCanvas> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    /// Extract a spatial tile spanning all frames and channels.
    ///
    /// With `wrap` the origin indexes the canvas as a torus; otherwise the
    /// region must fit inside the canvas.
    pub fn slice(
        &self,
        origin_y: usize,
        origin_x: usize,
        h: usize,
        w: usize,
        wrap: bool,
    ) -> Result<LatentCanvas> {
        if h > self.height || w > self.width {
            return Err(Error::dim(format!(
                "tile {h}x{w} larger than canvas {}x{}",
                self.height, self.width
            )));
        }
        if !wrap && (origin_y + h > self.height || origin_x + w > self.width) {
            return Err(Error::Bounds(format!(
                "slice at ({origin_y},{origin_x}) size {h}x{w} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut out = LatentCanvas::zeros(self.frames, self.channels, h, w, self.space);
        for f in 0..self.frames {
            for c in 0..self.channels {
                for dy in 0..h {
                    let sy = if wrap {
                        (origin_y + dy) % self.height
                    } else {
                        origin_y + dy
                    };
                    for dx in 0..w {
                        let sx = if wrap {
                            (origin_x + dx) % self.width
                        } else {
                            origin_x + dx
                        };
                        out.set(f, c, dy, dx, self.get(f, c, sy, sx));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Write a tile back at the given origin; exact inverse of [`slice`].
    ///
    /// [`slice`]: LatentCanvas::slice
    pub fn place(
        &mut self,
        tile: &LatentCanvas,
        origin_y: usize,
        origin_x: usize,
        wrap: bool,
    ) -> Result<()> {
        if tile.frames != self.frames || tile.channels != self.channels {
            return Err(Error::dim(format!(
                "place: tile has {}x{} frames/channels, canvas {}x{}",
                tile.frames, tile.channels, self.frames, self.channels
            )));
        }
        if tile.height > self.height || tile.width > self.width {
            return Err(Error::dim("place: tile larger than canvas".to_string()));
        }
        if !wrap && (origin_y + tile.height > self.height || origin_x + tile.width > self.width) {
            return Err(Error::Bounds(format!(
                "place at ({origin_y},{origin_x}) size {}x{} exceeds {}x{}",
                tile.height, tile.width, self.height, self.width
            )));
        }
        for f in 0..self.frames {
            for c in 0..self.channels {
                for dy in 0..tile.height {
                    let sy = if wrap {
                        (origin_y + dy) % self.height
                    } else {
                        origin_y + dy
                    };
                    for dx in 0..tile.width {
                        let sx = if wrap {
                            (origin_x + dx) % self.width
                        } else {
                            origin_x + dx
                        };
                        self.set(f, c, sy, sx, tile.get(f, c, dy, dx));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn with_space(mut self, space: Space) -> LatentCanvas {
        self.space = space;
        self
    }

    /// Stable content hash of dims plus raw little-endian data bytes.
    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::with_capacity(32 + self.data.len() * 4);
        for d in [self.frames, self.channels, self.height, self.width] {
            bytes.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        crate::rng::fnv1a64(&bytes)
    }

    pub fn max_abs_diff(&self, other: &LatentCanvas) -> Result<f32> {
        self.require_same_dims(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0f32, f32::max))
    }
}

/// VAE stand-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    Identity,
    AvgPool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Codec {
    pub kind: CodecKind,
    /// Spatial down/up ratio; identity requires 1.
    pub factor: usize,
}

impl Codec {
    pub fn identity() -> Self {
        Codec {
            kind: CodecKind::Identity,
            factor: 1,
        }
    }

    pub fn avgpool(factor: usize) -> Self {
        Codec {
            kind: CodecKind::AvgPool,
            factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(Error::config("codec factor must be >= 1"));
        }
        if self.kind == CodecKind::Identity && self.factor != 1 {
            return Err(Error::config("identity codec requires factor 1"));
        }
        Ok(())
    }

    /// Pixel space -> latent space.
    pub fn encode(&self, pixels: &LatentCanvas) -> Result<LatentCanvas> {
        self.validate()?;
        if pixels.space != Space::Pixel {
            return Err(Error::dim(
                "encode expects a pixel-space canvas".to_string(),
            ));
        }
        match self.kind {
            CodecKind::Identity => Ok(pixels.clone().with_space(Space::Latent)),
            CodecKind::AvgPool => {
                let f = self.factor;
                if !pixels.height.is_multiple_of(f) || !pixels.width.is_multiple_of(f) {
                    return Err(Error::dim(format!(
                        "encode: {}x{} not divisible by factor {f}",
                        pixels.height, pixels.width
                    )));
                }
                let (hh, ww) = (pixels.height / f, pixels.width / f);
                let inv = 1.0 / (f * f) as f64;
                let out = LatentCanvas::from_fn(
                    pixels.frames,
                    pixels.channels,
                    hh,
                    ww,
                    Space::Latent,
                    |fr, c, y, x| {
                        let mut acc = 0.0f64;
                        for dy in 0..f {
                            for dx in 0..f {
                                acc += f64::from(pixels.get(fr, c, y * f + dy, x * f + dx));
                            }
                        }
                        (acc * inv) as f32
                    },
                );
                Ok(out)
            }
        }
    }

    /// Latent space -> pixel space (nearest-neighbor block replication).
    pub fn decode(&self, latents: &LatentCanvas) -> Result<LatentCanvas> {
        self.validate()?;
        if latents.space != Space::Latent {
            return Err(Error::dim(
                "decode expects a latent-space canvas".to_string(),
            ));
        }
        match self.kind {
            CodecKind::Identity => Ok(latents.clone().with_space(Space::Pixel)),
            CodecKind::AvgPool => {
                let f = self.factor;
                let out = LatentCanvas::from_fn(
                    latents.frames,
                    latents.channels,
                    latents.height * f,
                    latents.width * f,
                    Space::Pixel,
                    |fr, c, y, x| latents.get(fr, c, y / f, x / f),
                );
                Ok(out)
            }
        }
    }
}

/// Catmull-Rom cubic kernel, `a = -0.5`.
fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        A * (((x - 5.0) * x + 8.0) * x - 4.0)
    } else {
        0.0
    }
}

/// Sample a single row/column phase: weights for taps at `floor(p)-1 ..= floor(p)+2`.
fn cubic_taps(p: f64) -> (isize, [f64; 4]) {
    let base = p.floor();
    let t = p - base;
    let w = [
        cubic_weight(t + 1.0),
        cubic_weight(t),
        cubic_weight(t - 1.0),
        cubic_weight(t - 2.0),
    ];
    (base as isize - 1, w)
}

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Per-frame, per-channel bicubic resize with clamp-to-edge sampling.
///
/// Coordinates map through half-pixel centers:
/// `src = (dst + 0.5) * (src_n / dst_n) - 0.5`. A constant field resizes to
/// the same constant and the operation is linear in the input.
pub fn bicubic_resize(
    src: &LatentCanvas,
    target_h: usize,
    target_w: usize,
) -> Result<LatentCanvas> {
    if src.space != Space::Pixel {
        return Err(Error::dim(
            "bicubic_resize expects a pixel-space canvas".to_string(),
        ));
    }
    if target_h == 0 || target_w == 0 {
        return Err(Error::dim(
            "bicubic_resize target dims must be >= 1".to_string(),
        ));
    }
    let scale_y = src.height as f64 / target_h as f64;
    let scale_x = src.width as f64 / target_w as f64;

    // Precompute per-axis taps once; they are shared by every frame/channel.
    let taps_y: Vec<(isize, [f64; 4])> = (0..target_h)
        .map(|y| cubic_taps((y as f64 + 0.5) * scale_y - 0.5))
        .collect();
    let taps_x: Vec<(isize, [f64; 4])> = (0..target_w)
        .map(|x| cubic_taps((x as f64 + 0.5) * scale_x - 0.5))
        .collect();

    let mut out = LatentCanvas::zeros(src.frames, src.channels, target_h, target_w, Space::Pixel);
    for f in 0..src.frames {
        for c in 0..src.channels {
            for (y, &(y0, wy)) in taps_y.iter().enumerate() {
                for (x, &(x0, wx)) in taps_x.iter().enumerate() {
                    let mut acc = 0.0f64;
                    for (j, &wyj) in wy.iter().enumerate() {
                        let sy = clamp_idx(y0 + j as isize, src.height);
                        let mut row = 0.0f64;
                        for (i, &wxi) in wx.iter().enumerate() {
                            let sx = clamp_idx(x0 + i as isize, src.width);
                            row += wxi * f64::from(src.get(f, c, sy, sx));
                        }
                        acc += wyj * row;
                    }
                    out.set(f, c, y, x, acc as f32);
                }
            }
        }
    }
    Ok(out)
}

const SGTN_MAGIC: &[u8; 4] = b"SGTN";
const SGTN_VERSION: u32 = 1;

/// Write the binary tensor dump: magic `SGTN`, u32 version, u32 ndim,
/// ndim x u64 dims, then little-endian f32 data in `(F,C,H,W)` order.
pub fn write_sgtn(canvas: &LatentCanvas, mut w: impl Write) -> Result<()> {
    w.write_all(SGTN_MAGIC)?;
    w.write_all(&SGTN_VERSION.to_le_bytes())?;
    w.write_all(&4u32.to_le_bytes())?;
    for d in [canvas.frames, canvas.channels, canvas.height, canvas.width] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(canvas.len() * 4);
    for v in canvas.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_sgtn(mut r: impl Read) -> Result<LatentCanvas> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SGTN_MAGIC {
        return Err(Error::dim(format!("not an SGTN file (magic {magic:?})")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != SGTN_VERSION {
        return Err(Error::dim(format!("unsupported SGTN version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let ndim = u32::from_le_bytes(u32buf);
    if ndim != 4 {
        return Err(Error::dim(format!("expected 4 dims, got {ndim}")));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        *d = u64::from_le_bytes(u64buf) as usize;
    }
    let count = dims.iter().product::<usize>();
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    LatentCanvas::from_vec(dims[0], dims[1], dims[2], dims[3], Space::Latent, data)
}

pub fn save_sgtn(canvas: &LatentCanvas, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_sgtn(canvas, std::io::BufWriter::new(file))
}

pub fn load_sgtn(path: impl AsRef<Path>) -> Result<LatentCanvas> {
    let file = std::fs::File::open(path)?;
    read_sgtn(std::io::BufReader::new(file))
}

/// Export one binary PGM (P5) per frame per channel, min-max normalized.
///
/// Files land in `dir` as `frame{f:03}_ch{c:02}.pgm`.
pub fn export_pgm_frames(canvas: &LatentCanvas, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for f in 0..canvas.frames {
        for c in 0..canvas.channels {
            let mut lo = f32::INFINITY;
            let mut hi = f32::NEG_INFINITY;
            for y in 0..canvas.height {
                for x in 0..canvas.width {
                    let v = canvas.get(f, c, y, x);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            let span = if hi > lo { hi - lo } else { 1.0 };
            let mut bytes = Vec::with_capacity(canvas.height * canvas.width);
            for y in 0..canvas.height {
                for x in 0..canvas.width {
                    let v = (canvas.get(f, c, y, x) - lo) / span;
                    bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
                }
            }
            let header = format!("P5\n{} {}\n255\n", canvas.width, canvas.height);
            let path = dir.join(format!("frame{f:03}_ch{c:02}.pgm"));
            let mut file = std::fs::File::create(path)?;
            file.write_all(header.as_bytes())?;
            file.write_all(&bytes)?;
        }
    }
    Ok(())
}
