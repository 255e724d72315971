//! Emission-absorption volume rendering over the two-branch field, with
//! exact reverse-mode gradients.
//!
//! The forward pass keeps only the sample positions and the parameter
//! version per ray; [`backward`] re-evaluates the samples and runs the
//! compositing chain in reverse. Gradient contributions are gathered per ray
//! in parallel and scattered sequentially in ray order, so results do not
//! depend on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::field::{composite_branches, sigmoid, Cell, FieldError, FieldSample, Grid, RadianceFieldParams, CHANNELS, COMPOSITE_EPS};
use crate::geometry::{generate_ray, Aabb, CameraPose, Ray};
use crate::image_io::{GrayImage, ImageBuffer};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("ray interval is empty")]
    EmptyInterval,
    #[error("need at least 2 samples per ray, got {0}")]
    TooFewSamples(usize),
    #[error("parameters changed since the forward pass")]
    StaleCache,
    #[error("{0} renders but {1} weight rows")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RenderMode {
    /// Both branches, composited per sample.
    Full,
    /// Foreground branch only, over black.
    ForegroundOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub n_samples: usize,
    pub stratified: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { n_samples: 128, stratified: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub t: f64,
    pub delta: f64,
}

/// `n` equal bins over `[t_near, t_far]`, one sample per bin: the midpoint,
/// or a uniform jitter inside the bin when `stratified`.
pub fn march<R: Rng + ?Sized>(ray: &Ray, n: usize, stratified: bool, rng: &mut R) -> Result<Vec<SamplePoint>, RenderError> {
    if n < 2 {
        return Err(RenderError::TooFewSamples(n));
    }
    let len = ray.t_far - ray.t_near;
    if !(len > 0.0) || !len.is_finite() {
        return Err(RenderError::EmptyInterval);
    }
    let delta = len / n as f64;
    Ok((0..n)
        .map(|i| {
            let offset = if stratified { rng.random::<f64>() } else { 0.5 };
            SamplePoint { t: ray.t_near + (i as f64 + offset) * delta, delta }
        })
        .collect())
}

/// Deterministic per-ray generator derived from a batch seed.
pub fn ray_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// What the backward pass needs to replay one ray.
#[derive(Debug, Clone)]
pub struct RayCache {
    pub ray: Ray,
    pub samples: Vec<SamplePoint>,
    pub mode: RenderMode,
    pub version: u64,
}

#[derive(Debug, Clone)]
pub struct RayRender {
    pub color: [f64; 3],
    pub opacity: f64,
    /// Accumulated opacity of the foreground branch alone.
    pub fg_opacity: f64,
    /// `None` when the ray missed the render bounds.
    pub cache: Option<RayCache>,
}

impl RayRender {
    pub fn empty() -> Self {
        Self { color: [0.0; 3], opacity: 0.0, fg_opacity: 0.0, cache: None }
    }
}

/// Box traversed in `mode`.
pub fn render_bounds(params: &RadianceFieldParams, mode: RenderMode) -> Aabb {
    let fg = params.fg.first().map(|g| g.bounds);
    match (mode, fg) {
        (RenderMode::ForegroundOnly, Some(b)) => b,
        (RenderMode::Full, Some(f)) => {
            let b = params.bg.bounds;
            Aabb::new(std::array::from_fn(|i| b.min[i].min(f.min[i])), std::array::from_fn(|i| b.max[i].max(f.max[i])))
        }
        _ => params.bg.bounds,
    }
}

struct PointEval {
    bg: Option<(Cell, [f64; CHANNELS])>,
    fg: Option<(Cell, [f64; CHANNELS])>,
    bg_sample: FieldSample,
    fg_sample: FieldSample,
    mixed: FieldSample,
}

#[inline]
fn lookup(grid: &Grid, p: &crate::geometry::Vec3) -> Option<(Cell, [f64; CHANNELS])> {
    grid.cell(p).map(|cell| {
        let raw = grid.interpolate(&cell);
        (cell, raw)
    })
}

#[inline]
fn eval_point(params: &RadianceFieldParams, fg: &Grid, mode: RenderMode, ray: &Ray, s: &SamplePoint) -> PointEval {
    let p = ray.at(s.t);
    let fg_hit = lookup(fg, &p);
    let fg_sample = fg_hit.as_ref().map_or(FieldSample::EMPTY, |(_, r)| FieldSample::from_raw(r));
    match mode {
        RenderMode::Full => {
            let bg_hit = lookup(&params.bg, &p);
            let bg_sample = bg_hit.as_ref().map_or(FieldSample::EMPTY, |(_, r)| FieldSample::from_raw(r));
            PointEval { bg: bg_hit, fg: fg_hit, bg_sample, fg_sample, mixed: composite_branches(&bg_sample, &fg_sample) }
        }
        RenderMode::ForegroundOnly => PointEval { bg: None, fg: fg_hit, bg_sample: FieldSample::EMPTY, fg_sample, mixed: fg_sample },
    }
}

/// Renders `ray` (re-clipped to the mode's bounds) at frame `ray.frame_time`.
pub fn render_ray<R: Rng + ?Sized>(
    ray: &Ray,
    params: &RadianceFieldParams,
    mode: RenderMode,
    settings: &RenderSettings,
    rng: &mut R,
) -> Result<RayRender, RenderError> {
    let fg = params.fg_grid(ray.frame_time)?;
    let ray = ray.clipped_to(&render_bounds(params, mode)).ok_or(RenderError::EmptyInterval)?;
    let samples = march(&ray, settings.n_samples, settings.stratified, rng)?;
    let mut transmittance = 1.0;
    let mut color = [0.0; 3];
    let mut fg_depth = 0.0;
    for s in &samples {
        let e = eval_point(params, fg, mode, &ray, s);
        let tau = e.mixed.density * s.delta;
        let decay = (-tau).exp();
        let w = transmittance * (1.0 - decay);
        for c in 0..3 {
            color[c] += w * e.mixed.color[c];
        }
        transmittance *= decay;
        fg_depth += e.fg_sample.density * s.delta;
    }
    Ok(RayRender {
        color,
        opacity: 1.0 - transmittance,
        fg_opacity: 1.0 - (-fg_depth).exp(),
        cache: Some(RayCache { ray, samples, mode, version: params.version() }),
    })
}

/// Like [`render_ray`] but a ray outside the bounds renders as empty.
pub fn render_ray_or_empty<R: Rng + ?Sized>(
    ray: &Ray,
    params: &RadianceFieldParams,
    mode: RenderMode,
    settings: &RenderSettings,
    rng: &mut R,
) -> Result<RayRender, RenderError> {
    match render_ray(ray, params, mode, settings, rng) {
        Err(RenderError::EmptyInterval) => Ok(RayRender::empty()),
        other => other,
    }
}

/// Renders a batch in parallel; ray `i` draws its jitter from `ray_rng(seed, i)`.
pub fn render_rays(
    rays: &[Ray],
    params: &RadianceFieldParams,
    mode: RenderMode,
    settings: &RenderSettings,
    seed: u64,
) -> Result<Vec<RayRender>, RenderError> {
    rays.par_iter()
        .enumerate()
        .map(|(i, r)| render_ray_or_empty(r, params, mode, settings, &mut ray_rng(seed, i as u64)))
        .collect()
}

/// Full-raster render plus the accumulated-opacity channel.
pub fn render_image(
    pose: &CameraPose,
    params: &RadianceFieldParams,
    t: usize,
    mode: RenderMode,
    settings: &RenderSettings,
    seed: u64,
) -> Result<(ImageBuffer, GrayImage), RenderError> {
    params.fg_grid(t)?;
    let k = pose.intrinsics;
    let bounds = render_bounds(params, mode);
    let pixels: Vec<(u32, u32)> = (0..k.height).flat_map(|y| (0..k.width).map(move |x| (x, y))).collect();
    let out: Vec<RayRender> = pixels
        .par_iter()
        .enumerate()
        .map(|(i, &(x, y))| match generate_ray(pose, x, y, t, &bounds) {
            Ok(ray) => render_ray_or_empty(&ray, params, mode, settings, &mut ray_rng(seed, i as u64)),
            Err(_) => Ok(RayRender::empty()),
        })
        .collect::<Result<_, _>>()?;
    let mut img = ImageBuffer::new(k.width, k.height);
    let mut alpha = GrayImage::new(k.width, k.height);
    for (i, r) in out.iter().enumerate() {
        img.data[i] = r.color.map(|c| c as f32);
        alpha.data[i] = r.opacity as f32;
    }
    Ok((img, alpha))
}

/// Upstream gradient for one ray: the scalar being differentiated is
/// `color . w_color + opacity * w_opacity + fg_opacity * w_fg_opacity`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OutputWeights {
    pub color: [f64; 3],
    pub opacity: f64,
    pub fg_opacity: f64,
}

/// Dense gradient storage for one grid with a list of touched voxels.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    pub values: Vec<f64>,
    touched: Vec<u32>,
    flags: Vec<bool>,
}

impl GradBuffer {
    pub fn for_grid(grid: &Grid) -> Self {
        Self { values: vec![0.0; grid.data.len()], touched: Vec::new(), flags: vec![false; grid.voxel_count()] }
    }

    #[inline]
    pub fn add(&mut self, voxel: usize, d_raw: &[f64; CHANNELS], weight: f64) {
        if !self.flags[voxel] {
            self.flags[voxel] = true;
            self.touched.push(voxel as u32);
        }
        let o = voxel * CHANNELS;
        for c in 0..CHANNELS {
            self.values[o + c] += weight * d_raw[c];
        }
    }

    #[inline]
    pub fn add_channel(&mut self, voxel: usize, channel: usize, v: f64) {
        if !self.flags[voxel] {
            self.flags[voxel] = true;
            self.touched.push(voxel as u32);
        }
        self.values[voxel * CHANNELS + channel] += v;
    }

    fn scatter(&mut self, cell: &Cell, d_raw: &[f64; CHANNELS]) {
        for (&v, &w) in cell.voxels.iter().zip(&cell.weights) {
            if w != 0.0 {
                self.add(v as usize, d_raw, w);
            }
        }
    }

    /// Voxels with at least one contribution since the last clear, in
    /// first-touch order.
    pub fn touched(&self) -> &[u32] {
        &self.touched
    }

    pub fn clear(&mut self) {
        if self.touched.len() * 8 > self.flags.len() {
            self.values.fill(0.0);
            self.flags.fill(false);
            self.touched.clear();
            return;
        }
        for &v in &self.touched {
            let o = v as usize * CHANNELS;
            self.values[o..o + CHANNELS].fill(0.0);
            self.flags[v as usize] = false;
        }
        self.touched.clear();
    }

    pub fn scale(&mut self, s: f64) {
        for &v in &self.touched {
            let o = v as usize * CHANNELS;
            for x in &mut self.values[o..o + CHANNELS] {
                *x *= s;
            }
        }
    }
}

/// Gradient accumulator shaped like [`RadianceFieldParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub bg: GradBuffer,
    pub fg: Vec<GradBuffer>,
}

impl Gradients {
    pub fn zeros_like(params: &RadianceFieldParams) -> Self {
        Self { bg: GradBuffer::for_grid(&params.bg), fg: params.fg.iter().map(GradBuffer::for_grid).collect() }
    }

    pub fn clear(&mut self) {
        self.bg.clear();
        self.fg.iter_mut().for_each(GradBuffer::clear);
    }

    /// Gradient w.r.t. raw channel `channel` of `voxel` in grid `grid`
    /// (0 = background, t = foreground frame t).
    pub fn get(&self, grid: usize, voxel: usize, channel: usize) -> f64 {
        let buf = if grid == 0 { &self.bg } else { &self.fg[grid - 1] };
        buf.values[voxel * CHANNELS + channel]
    }

    pub fn buffer_mut(&mut self, grid: usize) -> &mut GradBuffer {
        if grid == 0 {
            &mut self.bg
        } else {
            &mut self.fg[grid - 1]
        }
    }
}

struct GradRecord {
    grid: u32,
    cell: Cell,
    d_raw: [f64; CHANNELS],
}

/// Accumulates into `grads` the gradient of
/// `sum_r weights[r] . outputs(renders[r])` w.r.t. every raw parameter.
pub fn backward(
    renders: &[RayRender],
    weights: &[OutputWeights],
    params: &RadianceFieldParams,
    grads: &mut Gradients,
) -> Result<(), RenderError> {
    if renders.len() != weights.len() {
        return Err(RenderError::LengthMismatch(renders.len(), weights.len()));
    }
    if renders.iter().filter_map(|r| r.cache.as_ref()).any(|c| c.version != params.version()) {
        return Err(RenderError::StaleCache);
    }
    let records: Vec<Vec<GradRecord>> = renders
        .par_iter()
        .zip(weights.par_iter())
        .map(|(r, w)| match &r.cache {
            Some(cache) if *w != OutputWeights::default() => ray_gradient(cache, w, params),
            _ => Ok(Vec::new()),
        })
        .collect::<Result<_, _>>()?;
    for rec in records.iter().flatten() {
        grads.buffer_mut(rec.grid as usize).scatter(&rec.cell, &rec.d_raw);
    }
    Ok(())
}

struct Replay {
    eval: PointEval,
    delta: f64,
    transmittance: f64,
    alpha: f64,
}

fn ray_gradient(cache: &RayCache, w: &OutputWeights, params: &RadianceFieldParams) -> Result<Vec<GradRecord>, RenderError> {
    let frame = cache.ray.frame_time;
    let fg = params.fg_grid(frame)?;
    let mut replay = Vec::with_capacity(cache.samples.len());
    let mut transmittance = 1.0;
    let mut fg_depth = 0.0;
    for s in &cache.samples {
        let eval = eval_point(params, fg, cache.mode, &cache.ray, s);
        let decay = (-eval.mixed.density * s.delta).exp();
        fg_depth += eval.fg_sample.density * s.delta;
        replay.push(Replay { eval, delta: s.delta, transmittance, alpha: 1.0 - decay });
        transmittance *= decay;
    }
    let final_t = transmittance;
    let fg_t = (-fg_depth).exp();

    let wdot = |c: &[f64; 3]| w.color[0] * c[0] + w.color[1] * c[1] + w.color[2] * c[2];
    let mut records = Vec::with_capacity(replay.len() * 2);
    // Suffix sum of T_j a_j (w . c_j) over j > i.
    let mut suffix = 0.0;
    for r in replay.iter().rev() {
        let e = &r.eval;
        let t_next = r.transmittance * (1.0 - r.alpha);
        let d_tau = t_next * wdot(&e.mixed.color) - suffix + w.opacity * final_t;
        suffix += r.transmittance * r.alpha * wdot(&e.mixed.color);

        let d_sigma = d_tau * r.delta;
        let d_color: [f64; 3] = std::array::from_fn(|c| w.color[c] * r.transmittance * r.alpha);
        let d_sigma_fg_extra = w.fg_opacity * r.delta * fg_t;

        let (sb, sf) = (e.bg_sample.density, e.fg_sample.density);
        let (d_sb, d_sf, d_cb, d_cf) = match cache.mode {
            RenderMode::Full => {
                let denom = sb + sf + COMPOSITE_EPS;
                let mut d_sb = d_sigma;
                let mut d_sf = d_sigma + d_sigma_fg_extra;
                for c in 0..3 {
                    d_sb += d_color[c] * (e.bg_sample.color[c] - e.mixed.color[c]) / denom;
                    d_sf += d_color[c] * (e.fg_sample.color[c] - e.mixed.color[c]) / denom;
                }
                let d_cb = d_color.map(|g| g * sb / denom);
                let d_cf = d_color.map(|g| g * sf / denom);
                (d_sb, d_sf, d_cb, d_cf)
            }
            RenderMode::ForegroundOnly => (0.0, d_sigma + d_sigma_fg_extra, [0.0; 3], d_color),
        };
        if let Some((cell, raw)) = &e.bg {
            records.push(GradRecord { grid: 0, cell: *cell, d_raw: raw_grad(raw, &e.bg_sample, d_sb, &d_cb) });
        }
        if let Some((cell, raw)) = &e.fg {
            records.push(GradRecord { grid: frame as u32, cell: *cell, d_raw: raw_grad(raw, &e.fg_sample, d_sf, &d_cf) });
        }
    }
    Ok(records)
}

#[inline]
fn raw_grad(raw: &[f64; CHANNELS], s: &FieldSample, d_sigma: f64, d_color: &[f64; 3]) -> [f64; CHANNELS] {
    [
        d_sigma * sigmoid(raw[0]),
        d_color[0] * s.color[0] * (1.0 - s.color[0]),
        d_color[1] * s.color[1] * (1.0 - s.color[1]),
        d_color[2] * s.color[2] * (1.0 - s.color[2]),
    ]
}
