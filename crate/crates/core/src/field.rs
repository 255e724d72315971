//! Explicit two-branch radiance field: one static background grid and one
//! foreground grid per frame, queried by trilinear interpolation of raw
//! values followed by softplus (density) and sigmoid (color) activations.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::geometry::{Aabb, Vec3};

/// Guards the 0/0 case when blending branch colors.
pub const COMPOSITE_EPS: f64 = 1e-8;

/// Raw values per voxel: density followed by rgb.
pub const CHANNELS: usize = 4;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("frame {0} outside 1..={1}")]
    FrameOutOfRange(usize, usize),
    #[error("malformed field data: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub color: [f64; 3],
    pub density: f64,
}

impl FieldSample {
    pub const EMPTY: FieldSample = FieldSample { color: [0.0; 3], density: 0.0 };

    pub fn from_raw(raw: &[f64; CHANNELS]) -> Self {
        Self { density: softplus(raw[0]), color: [sigmoid(raw[1]), sigmoid(raw[2]), sigmoid(raw[3])] }
    }
}

/// The eight voxels touched by one trilinear lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub voxels: [u32; 8],
    pub weights: [f64; 8],
}

/// Dense voxel grid over an axis-aligned box. Voxel centers sit at
/// `min + (i + 0.5) * size`; lookups between the outermost centers and the
/// box faces clamp to the edge voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub bounds: Aabb,
    pub resolution: [usize; 3],
    pub data: Vec<f32>,
}

impl Grid {
    pub fn filled(bounds: Aabb, resolution: [usize; 3], raw: [f32; CHANNELS]) -> Self {
        let n = resolution.iter().product::<usize>();
        let mut data = Vec::with_capacity(n * CHANNELS);
        for _ in 0..n {
            data.extend_from_slice(&raw);
        }
        Self { bounds, resolution, data }
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution.iter().product()
    }

    #[inline]
    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.resolution[1] + y) * self.resolution[0] + x
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        let e = self.bounds.extent();
        let c = [x, y, z];
        Vec3::from_fn(|i, _| self.bounds.min[i] + (c[i] as f64 + 0.5) * e[i] / self.resolution[i] as f64)
    }

    #[inline]
    pub fn raw(&self, voxel: usize) -> [f32; CHANNELS] {
        let o = voxel * CHANNELS;
        [self.data[o], self.data[o + 1], self.data[o + 2], self.data[o + 3]]
    }

    /// Interpolation cell for `p`, or `None` outside the bounds.
    #[inline]
    pub fn cell(&self, p: &Vec3) -> Option<Cell> {
        if !self.bounds.contains(p) {
            return None;
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut step = [0usize; 3];
        for i in 0..3 {
            let n = self.resolution[i];
            let size = (self.bounds.max[i] - self.bounds.min[i]) / n as f64;
            let u = ((p[i] - self.bounds.min[i]) / size - 0.5).clamp(0.0, (n - 1) as f64);
            if n == 1 {
                continue;
            }
            let i0 = (u.floor() as usize).min(n - 2);
            base[i] = i0;
            frac[i] = u - i0 as f64;
            step[i] = 1;
        }
        let mut voxels = [0u32; 8];
        let mut weights = [0.0f64; 8];
        for corner in 0..8 {
            let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            voxels[corner] = self.voxel_index(base[0] + dx * step[0], base[1] + dy * step[1], base[2] + dz * step[2]) as u32;
            weights[corner] = wx * wy * wz;
        }
        Some(Cell { voxels, weights })
    }

    #[inline]
    pub fn interpolate(&self, cell: &Cell) -> [f64; CHANNELS] {
        let mut out = [0.0; CHANNELS];
        for (&v, &w) in cell.voxels.iter().zip(&cell.weights) {
            let o = v as usize * CHANNELS;
            for (c, acc) in out.iter_mut().enumerate() {
                *acc += w * self.data[o + c] as f64;
            }
        }
        out
    }

    /// Activated sample at `p`; empty outside the bounds.
    pub fn sample(&self, p: &Vec3) -> FieldSample {
        match self.cell(p) {
            Some(cell) => FieldSample::from_raw(&self.interpolate(&cell)),
            None => FieldSample::EMPTY,
        }
    }

    fn write_header(&self, w: &mut impl Write) -> std::io::Result<()> {
        for v in self.bounds.min.iter().chain(&self.bounds.max) {
            w.write_all(&v.to_le_bytes())?;
        }
        for &r in &self.resolution {
            w.write_all(&(r as u32).to_le_bytes())?;
        }
        Ok(())
    }

    fn read_header(r: &mut impl Read) -> Result<(Aabb, [usize; 3]), FieldError> {
        let mut b = [0.0f64; 6];
        for v in &mut b {
            *v = read_f64(r)?;
        }
        let mut res = [0usize; 3];
        for v in &mut res {
            *v = read_u32(r)? as usize;
        }
        if res.contains(&0) || res.iter().product::<usize>() > 1 << 28 {
            return Err(FieldError::Malformed(format!("bad grid resolution {res:?}")));
        }
        Ok((Aabb::new([b[0], b[1], b[2]], [b[3], b[4], b[5]]), res))
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Background grid plus per-frame foreground grids (frames are 1-based).
#[derive(Debug, Clone)]
pub struct RadianceFieldParams {
    pub bg: Grid,
    pub fg: Vec<Grid>,
    version: u64,
}

impl PartialEq for RadianceFieldParams {
    fn eq(&self, other: &Self) -> bool {
        self.bg == other.bg && self.fg == other.fg
    }
}

impl RadianceFieldParams {
    /// Uniform initialization: every voxel holds `raw_density` and `raw_rgb`.
    pub fn uniform(
        bg_bounds: Aabb,
        bg_res: [usize; 3],
        fg_bounds: Aabb,
        fg_res: [usize; 3],
        frames: usize,
        raw_density: f32,
        raw_rgb: f32,
    ) -> Self {
        let raw = [raw_density, raw_rgb, raw_rgb, raw_rgb];
        let fg = Grid::filled(fg_bounds, fg_res, raw);
        Self {
            bg: Grid::filled(bg_bounds, bg_res, raw),
            fg: vec![fg; frames],
            version: fresh_version(),
        }
    }

    pub fn from_grids(bg: Grid, fg: Vec<Grid>) -> Result<Self, FieldError> {
        if let Some(first) = fg.first() {
            if fg.iter().any(|g| g.bounds != first.bounds || g.resolution != first.resolution) {
                return Err(FieldError::Malformed("foreground grids differ in bounds or resolution".into()));
            }
        }
        Ok(Self { bg, fg, version: fresh_version() })
    }

    pub fn frames(&self) -> usize {
        self.fg.len()
    }

    /// Identifier that changes on every mutation through [`Self::touch`].
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Marks the parameters as modified, invalidating forward caches.
    pub fn touch(&mut self) {
        self.version = fresh_version();
    }

    pub fn fg_grid(&self, t: usize) -> Result<&Grid, FieldError> {
        if t == 0 || t > self.fg.len() {
            return Err(FieldError::FrameOutOfRange(t, self.fg.len()));
        }
        Ok(&self.fg[t - 1])
    }

    pub fn fg_grid_mut(&mut self, t: usize) -> Result<&mut Grid, FieldError> {
        if t == 0 || t > self.fg.len() {
            return Err(FieldError::FrameOutOfRange(t, self.fg.len()));
        }
        self.version = fresh_version();
        Ok(&mut self.fg[t - 1])
    }

    pub fn param_count(&self) -> usize {
        self.bg.data.len() + self.fg.iter().map(|g| g.data.len()).sum::<usize>()
    }

    /// Body layout: bg header, fg header, frame count, then raw f32 arrays
    /// (background first, frames ascending), all little-endian.
    pub fn write_body(&self, w: &mut impl Write) -> std::io::Result<()> {
        self.bg.write_header(w)?;
        let fg_template = self.fg.first().cloned().unwrap_or_else(|| Grid::filled(self.bg.bounds, [1, 1, 1], [0.0; 4]));
        fg_template.write_header(w)?;
        w.write_all(&(self.fg.len() as u32).to_le_bytes())?;
        write_f32s(w, &self.bg.data)?;
        for g in &self.fg {
            write_f32s(w, &g.data)?;
        }
        Ok(())
    }

    pub fn read_body(r: &mut impl Read) -> Result<Self, FieldError> {
        let (bg_bounds, bg_res) = Grid::read_header(r)?;
        let (fg_bounds, fg_res) = Grid::read_header(r)?;
        let frames = read_u32(r)? as usize;
        if frames > 100_000 {
            return Err(FieldError::Malformed(format!("implausible frame count {frames}")));
        }
        let mut bg = Grid { bounds: bg_bounds, resolution: bg_res, data: Vec::new() };
        bg.data = read_f32s(r, bg.voxel_count() * CHANNELS)?;
        let mut fg = Vec::with_capacity(frames);
        for _ in 0..frames {
            let mut g = Grid { bounds: fg_bounds, resolution: fg_res, data: Vec::new() };
            g.data = read_f32s(r, g.voxel_count() * CHANNELS)?;
            fg.push(g);
        }
        Self::from_grids(bg, fg)
    }
}

pub fn query_background(x: &Vec3, params: &RadianceFieldParams) -> FieldSample {
    params.bg.sample(x)
}

pub fn query_foreground(x: &Vec3, t: usize, params: &RadianceFieldParams) -> Result<FieldSample, FieldError> {
    Ok(params.fg_grid(t)?.sample(x))
}

/// Density-weighted blend of the two branches.
pub fn composite_branches(bg: &FieldSample, fg: &FieldSample) -> FieldSample {
    let sum = bg.density + fg.density;
    let denom = sum + COMPOSITE_EPS;
    let color = std::array::from_fn(|c| (bg.density * bg.color[c] + fg.density * fg.color[c]) / denom);
    FieldSample { color, density: sum }
}

pub(crate) fn write_f32s(w: &mut impl Write, v: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(v.len() * 4);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_f32s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub(crate) fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
