//! The optimization loop: primary-view ray batches, super-resolution
//! patches, the continuity window and scheduled novel-view batches, all
//! feeding one sparse Adam update per iteration. Also owns configuration,
//! checkpoints and the loss log.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{read_f32s, read_u32, softplus_inv, write_f32s, FieldError, RadianceFieldParams, CHANNELS};
use crate::geometry::{generate_ray, symmetric_pair, DomeView, GeometryError, Ray};
use crate::harness::{default_dome, Dataset, HarnessError, PseudoGtCache};
use crate::losses::{
    loss_cont_weighted, loss_nv, loss_rec, loss_sr, total_loss, Bicubic, GradientFeatures, LossBreakdown, LossError, LossTerms, LossWeights, NvPrediction,
    NvTarget, Patch, Upsampler,
};
use crate::render::{backward, render_bounds, render_rays, Gradients, OutputWeights, RayRender, RenderError, RenderMode, RenderSettings};
use crate::sampling::{sample_pixels, SamplingStrategy};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EXDN";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Near-empty initial density after activation.
pub const INIT_DENSITY: f64 = 0.01;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("loss diverged at iteration {iteration}: {total}")]
    DivergedLoss { iteration: usize, total: f64 },
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint does not match the dataset: {0}")]
    CheckpointMismatch(String),
    #[error("novel-view terms are enabled but no pseudo-GT cache was given")]
    MissingPseudoGt,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config write error: {0}")]
    TomlWrite(#[from] toml::ser::Error),
}

/// Which loss terms take part. Disabled terms report 0 and send no gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossToggles {
    pub rec: bool,
    pub cont: bool,
    pub sr: bool,
    pub nv_color: bool,
    pub nv_sigma: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self { rec: true, cont: true, sr: true, nv_color: true, nv_sigma: true }
    }
}

impl LossToggles {
    pub fn any_nv(&self) -> bool {
        self.nv_color || self.nv_sigma
    }

    /// Parses a comma list of enabled terms (`rec,cont,sr,nv_c,nv_sigma`),
    /// or `all`.
    pub fn parse(list: &str) -> Result<Self, String> {
        if list.trim() == "all" {
            return Ok(Self::default());
        }
        let mut t = Self { rec: false, cont: false, sr: false, nv_color: false, nv_sigma: false };
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "rec" => t.rec = true,
                "cont" => t.cont = true,
                "sr" => t.sr = true,
                "nv_c" | "nv_color" => t.nv_color = true,
                "nv_sigma" => t.nv_sigma = true,
                "nv" => (t.nv_color, t.nv_sigma) = (true, true),
                other => return Err(format!("unknown loss term {other:?}")),
            }
        }
        Ok(t)
    }

    pub fn tag(&self) -> String {
        let names = [(self.rec, "rec"), (self.cont, "cont"), (self.sr, "sr"), (self.nv_color, "nv_c"), (self.nv_sigma, "nv_sigma")];
        names.iter().filter(|(on, _)| *on).map(|(_, n)| *n).collect::<Vec<_>>().join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rays_per_iter_primary: usize,
    /// Split evenly across the two views of a symmetric pair.
    pub rays_per_iter_nv: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_cont: f64,
    pub lambda_nv_color: f64,
    pub lambda_nv_sigma: f64,
    pub lambda_sr: f64,
    /// Defaults to 20% of `iterations`.
    pub nv_start_iteration: Option<usize>,
    pub losses: LossToggles,
    pub strategy: SamplingStrategy,
    pub seed: u64,
    pub n_samples: usize,
    pub stratified: bool,
    pub sr_patches: usize,
    /// Full-resolution patch side; rendered at half this size.
    pub sr_patch_size: usize,
    pub dome_azimuths: Vec<f64>,
    pub dome_elevations: Vec<f64>,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub bg_resolution: usize,
    pub fg_resolution: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let (dome_azimuths, dome_elevations) = default_dome();
        Self {
            iterations: 5000,
            rays_per_iter_primary: 1024,
            rays_per_iter_nv: 1024,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda_cont: 1.0,
            lambda_nv_color: 1.0,
            lambda_nv_sigma: 0.1,
            lambda_sr: 0.5,
            nv_start_iteration: None,
            losses: LossToggles::default(),
            strategy: SamplingStrategy::default(),
            seed: 0,
            n_samples: 128,
            stratified: false,
            sr_patches: 4,
            sr_patch_size: 32,
            dome_azimuths,
            dome_elevations,
            checkpoint_every: 1000,
            bg_resolution: 96,
            fg_resolution: 48,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if [self.lambda_cont, self.lambda_nv_color, self.lambda_nv_sigma, self.lambda_sr].iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("loss weights must be finite and non-negative");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2");
        }
        if self.sr_patches > 0 && (self.sr_patch_size < 2 || self.sr_patch_size % 2 != 0) {
            return bad("sr_patch_size must be an even number >= 2");
        }
        if self.bg_resolution == 0 || self.fg_resolution == 0 {
            return bad("grid resolutions must be positive");
        }
        Ok(())
    }

    pub fn nv_start(&self) -> usize {
        self.nv_start_iteration.unwrap_or(self.iterations / 5)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { cont: self.lambda_cont, nv_color: self.lambda_nv_color, nv_sigma: self.lambda_nv_sigma, sr: self.lambda_sr, nv_start_iteration: self.nv_start() }
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings { n_samples: self.n_samples, stratified: self.stratified }
    }

    pub fn from_toml(s: &str) -> Result<Self, TrainError> {
        let c: Self = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String, TrainError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Adam moments for every raw parameter, laid out like the grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// Grid 0 is the background, grid `t` is foreground frame `t`.
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
}

impl Moments {
    pub fn zeros_like(params: &RadianceFieldParams) -> Self {
        let shapes: Vec<Vec<f32>> = std::iter::once(&params.bg).chain(&params.fg).map(|g| vec![0.0; g.data.len()]).collect();
        Self { first: shapes.clone(), second: shapes }
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: RadianceFieldParams,
    pub moments: Moments,
    /// Number of completed iterations.
    pub iteration: usize,
    pub rng: ChaCha8Rng,
}

impl PartialEq for TrainState {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.moments == other.moments && self.iteration == other.iteration && self.rng == other.rng
    }
}

impl TrainState {
    /// Near-empty, mid-gray field over the dataset's bounds.
    pub fn init(dataset: &Dataset, config: &TrainConfig) -> Self {
        let m = &dataset.manifest;
        let params = RadianceFieldParams::uniform(
            m.bg_bounds,
            [config.bg_resolution; 3],
            m.fg_bounds,
            [config.fg_resolution; 3],
            m.frames,
            softplus_inv(INIT_DENSITY) as f32,
            0.0,
        );
        Self { moments: Moments::zeros_like(&params), params, iteration: 0, rng: ChaCha8Rng::seed_from_u64(config.seed) }
    }
}

/// Everything a step reads besides the state.
pub struct TrainData<'a> {
    pub dataset: &'a Dataset,
    pub pseudo_gt: Option<&'a PseudoGtCache>,
}

/// Pseudo-GT dome views selected by the config's azimuth/elevation lists,
/// with their index into the cache.
fn selected_dome(cache: &PseudoGtCache, config: &TrainConfig) -> (Vec<DomeView>, Vec<usize>) {
    let has = |list: &[f64], v: f64| list.iter().any(|x| (x - v).abs() < 1e-9);
    cache
        .dome
        .iter()
        .enumerate()
        .filter(|(_, d)| has(&config.dome_azimuths, d.viewpoint.azimuth) && has(&config.dome_elevations, d.viewpoint.elevation))
        .map(|(i, d)| (*d, i))
        .unzip()
}

/// Renders `rays`, leaving an empty result where a pixel ray missed.
fn render_optional(rays: &[Option<Ray>], params: &RadianceFieldParams, mode: RenderMode, settings: &RenderSettings, seed: u64) -> Result<Vec<RayRender>, RenderError> {
    let hits: Vec<Ray> = rays.iter().flatten().copied().collect();
    let mut rendered = render_rays(&hits, params, mode, settings, seed)?.into_iter();
    Ok(rays.iter().map(|r| if r.is_some() { rendered.next().unwrap() } else { RayRender::empty() }).collect())
}

/// One iteration: forward, losses, backward, sparse Adam update.
pub fn train_step(state: &mut TrainState, grads: &mut Gradients, data: &TrainData, config: &TrainConfig) -> Result<LossBreakdown, TrainError> {
    let weights = config.loss_weights();
    let toggles = config.losses;
    let settings = config.render_settings();
    let iteration = state.iteration;
    let params = &state.params;
    let frames = params.frames();
    let rng = &mut state.rng;
    let mut terms = LossTerms::default();
    grads.clear();

    // primary view: reconstruction and super-resolution patches
    let t = rng.random_range(1..=frames);
    let frame = data.dataset.frame(t);
    let (w, h) = (frame.pose.intrinsics.width, frame.pose.intrinsics.height);
    let full_bounds = render_bounds(params, RenderMode::Full);
    let mut rays: Vec<Option<Ray>> = Vec::new();
    let mut targets: Vec<[f64; 3]> = Vec::new();
    if toggles.rec {
        let n = config.rays_per_iter_primary.min((w * h) as usize);
        for i in rand::seq::index::sample(rng, (w * h) as usize, n) {
            let (x, y) = ((i as u32) % w, (i as u32) / w);
            rays.push(generate_ray(&frame.pose, x, y, t, &full_bounds).ok());
            targets.push(frame.rgb.get(x, y).map(f64::from));
        }
    }
    let n_rec = rays.len();
    let half = config.sr_patch_size / 2;
    let low_pose = frame.pose.with_intrinsics(frame.pose.intrinsics.downscaled(2));
    let mut patches = Vec::new();
    if toggles.sr && config.sr_patches > 0 && config.sr_patch_size as u32 <= w.min(h) {
        for _ in 0..config.sr_patches {
            let x0 = 2 * rng.random_range(0..=(w as usize - config.sr_patch_size) / 2);
            let y0 = 2 * rng.random_range(0..=(h as usize - config.sr_patch_size) / 2);
            patches.push((x0, y0));
            for ly in 0..half {
                for lx in 0..half {
                    rays.push(generate_ray(&low_pose, (x0 / 2 + lx) as u32, (y0 / 2 + ly) as u32, t, &full_bounds).ok());
                }
            }
        }
    }
    let render_seed = rng.next_u64();
    let primary = render_optional(&rays, params, RenderMode::Full, &settings, render_seed)?;
    let mut primary_w = vec![OutputWeights::default(); primary.len()];
    if toggles.rec {
        let pred: Vec<[f64; 3]> = primary[..n_rec].iter().map(|r| r.color).collect();
        let (l, d) = loss_rec(&pred, &targets)?;
        terms.rec = l;
        for (ow, g) in primary_w.iter_mut().zip(d) {
            ow.color = g;
        }
    }
    for (k, &(x0, y0)) in patches.iter().enumerate() {
        let base = n_rec + k * half * half;
        let rendered = Patch { width: half, height: half, data: primary[base..base + half * half].iter().map(|r| r.color).collect() };
        let mut reference = Patch::zeros(2 * half, 2 * half);
        for y in 0..2 * half {
            for x in 0..2 * half {
                *reference.at_mut(x, y) = frame.rgb.get((x0 + x) as u32, (y0 + y) as u32).map(f64::from);
            }
        }
        let (l, g) = loss_sr(&rendered, &reference, &Bicubic::default() as &dyn Upsampler, &GradientFeatures)?;
        terms.sr += l;
        for (ow, gp) in primary_w[base..base + half * half].iter_mut().zip(&g.data) {
            ow.color = gp.map(|v| weights.sr * v);
        }
    }
    backward(&primary, &primary_w, params, grads)?;

    // temporal continuity over a sliding three-frame window
    if toggles.cont && frames >= 3 {
        let start = iteration % (frames - 2) + 1;
        terms.cont = loss_cont_weighted(params, start, weights.cont, Some(grads))?;
    }

    // novel views from the pseudo-GT cache
    if toggles.any_nv() && weights.nv_active(iteration) {
        let cache = data.pseudo_gt.ok_or(TrainError::MissingPseudoGt)?;
        let (dome, index) = selected_dome(cache, config);
        let pair = symmetric_pair(rng, &dome)?;
        let fg_bounds = render_bounds(params, RenderMode::ForegroundOnly);
        let mut nv_rays = Vec::new();
        let mut nv_targets = Vec::new();
        for (k, view_idx) in [pair.positive, pair.negative].into_iter().enumerate() {
            let view = &cache.views[t - 1][index[view_idx]];
            let n = config.rays_per_iter_nv / 2 + (k == 0) as usize * (config.rays_per_iter_nv % 2);
            for (x, y) in sample_pixels(config.strategy, &view.mask, n, rng).pixels {
                nv_rays.push(generate_ray(&view.pose, x, y, t, &fg_bounds).ok());
                nv_targets.push(NvTarget { rgb: view.rgb.get(x, y).map(f64::from), mask: view.mask.get(x, y) as f64 });
            }
        }
        let nv_seed = rng.next_u64();
        let rendered = render_optional(&nv_rays, params, RenderMode::ForegroundOnly, &settings, nv_seed)?;
        let preds: Vec<NvPrediction> = rendered.iter().map(|r| NvPrediction { color: r.color, fg_opacity: r.fg_opacity }).collect();
        let nv = loss_nv(&preds, &nv_targets)?;
        let (wc, ws) = (
            if toggles.nv_color { weights.nv_color } else { 0.0 },
            if toggles.nv_sigma { weights.nv_sigma } else { 0.0 },
        );
        terms.nv_c = if toggles.nv_color { nv.color } else { 0.0 };
        terms.nv_sigma = if toggles.nv_sigma { nv.sigma } else { 0.0 };
        let nv_w: Vec<OutputWeights> = nv
            .d_color
            .iter()
            .zip(&nv.d_fg_opacity)
            .map(|(dc, ds)| OutputWeights { color: dc.map(|v| wc * v), opacity: 0.0, fg_opacity: ws * ds })
            .collect();
        backward(&rendered, &nv_w, params, grads)?;
    }

    let breakdown = total_loss(&terms, &weights, iteration);
    if !breakdown.total.is_finite() {
        return Err(TrainError::DivergedLoss { iteration, total: breakdown.total });
    }
    adam_update(state, grads, config);
    state.iteration += 1;
    Ok(breakdown)
}

/// Adam on the touched voxels only, with bias correction by global step.
fn adam_update(state: &mut TrainState, grads: &Gradients, config: &TrainConfig) {
    let step = (state.iteration + 1) as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let (c1, c2) = (1.0 - b1.powi(step), 1.0 - b2.powi(step));
    let lr = config.learning_rate;
    let params = &mut state.params;
    let buffers = std::iter::once(&grads.bg).chain(&grads.fg);
    let grids = std::iter::once(&mut params.bg).chain(params.fg.iter_mut());
    for (gi, (buf, grid)) in buffers.zip(grids).enumerate() {
        let (m, v) = (&mut state.moments.first[gi], &mut state.moments.second[gi]);
        for &voxel in buf.touched() {
            let o = voxel as usize * CHANNELS;
            for i in o..o + CHANNELS {
                let g = buf.values[i];
                if g == 0.0 {
                    continue;
                }
                let mi = b1 * m[i] as f64 + (1.0 - b1) * g;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + config.adam_eps);
                grid.data[i] = (grid.data[i] as f64 - update) as f32;
            }
        }
    }
    params.touch();
}

fn write_rng(w: &mut impl Write, rng: &ChaCha8Rng) -> std::io::Result<()> {
    w.write_all(&rng.get_seed())?;
    w.write_all(&rng.get_stream().to_le_bytes())?;
    w.write_all(&rng.get_word_pos().to_le_bytes())
}

fn read_rng(r: &mut impl Read) -> std::io::Result<ChaCha8Rng> {
    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    let mut stream = [0u8; 8];
    r.read_exact(&mut stream)?;
    let mut pos = [0u8; 16];
    r.read_exact(&mut pos)?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(u64::from_le_bytes(stream));
    rng.set_word_pos(u128::from_le_bytes(pos));
    Ok(rng)
}

/// Serialized checkpoint: magic, version, field body, iteration, rng state,
/// then first and second moments grid by grid.
pub fn checkpoint_bytes(state: &TrainState) -> std::io::Result<Vec<u8>> {
    let mut out = Vec::with_capacity(state.params.param_count() * 12 + 256);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    state.params.write_body(&mut out)?;
    out.extend_from_slice(&(state.iteration as u64).to_le_bytes());
    write_rng(&mut out, &state.rng)?;
    for grid in state.moments.first.iter().chain(&state.moments.second) {
        write_f32s(&mut out, grid)?;
    }
    Ok(out)
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<(), TrainError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(&checkpoint_bytes(state)?)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<TrainState, TrainError> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(TrainError::BadMagic);
    }
    let mut r = &bytes[4..];
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let params = RadianceFieldParams::read_body(&mut r)?;
    let mut it = [0u8; 8];
    r.read_exact(&mut it)?;
    let rng = read_rng(&mut r)?;
    let mut moments = Moments::zeros_like(&params);
    for grid in moments.first.iter_mut().chain(moments.second.iter_mut()) {
        *grid = read_f32s(&mut r, grid.len())?;
    }
    if !r.is_empty() {
        return Err(TrainError::Field(FieldError::Malformed(format!("{} trailing bytes", r.len()))));
    }
    Ok(TrainState { params, moments, iteration: u64::from_le_bytes(it) as usize, rng })
}

/// Reads the whole file before decoding, so a failure never yields a
/// partial state.
pub fn load_checkpoint(path: &Path) -> Result<TrainState, TrainError> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

/// Loss log writer; rows are exact decimal renderings of the breakdown.
pub struct LossLog {
    out: BufWriter<File>,
}

impl LossLog {
    /// Starts a fresh log, or keeps the rows before `resume_from` of an
    /// existing one.
    pub fn open(path: &Path, resume_from: Option<usize>) -> Result<Self, TrainError> {
        let mut kept = vec![LossBreakdown::CSV_HEADER.to_string()];
        if let (Some(k), Ok(existing)) = (resume_from, std::fs::read_to_string(path)) {
            kept.extend(
                existing
                    .lines()
                    .skip(1)
                    .filter(|l| l.split(',').next().and_then(|i| i.parse::<usize>().ok()).is_some_and(|i| i < k))
                    .map(str::to_string),
            );
        }
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        for line in kept {
            writeln!(out, "{line}")?;
        }
        Ok(Self { out })
    }

    pub fn append(&mut self, b: &LossBreakdown) -> Result<(), TrainError> {
        writeln!(self.out, "{}", b.csv_row())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.out.flush()?;
        Ok(())
    }
}

/// Runs iterations until `config.iterations` have completed, calling
/// `on_step` after each one.
pub fn run(
    state: &mut TrainState,
    data: &TrainData,
    config: &TrainConfig,
    mut on_step: impl FnMut(&TrainState, &LossBreakdown) -> Result<(), TrainError>,
) -> Result<(), TrainError> {
    config.validate()?;
    if config.losses.any_nv() && data.pseudo_gt.is_none() && config.nv_start() < config.iterations {
        return Err(TrainError::MissingPseudoGt);
    }
    if state.params.frames() != data.dataset.manifest.frames {
        return Err(TrainError::CheckpointMismatch(format!("{} frames vs {}", state.params.frames(), data.dataset.manifest.frames)));
    }
    let mut grads = Gradients::zeros_like(&state.params);
    while state.iteration < config.iterations {
        let b = train_step(state, &mut grads, data, config)?;
        on_step(state, &b)?;
    }
    Ok(())
}

/// Files produced by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub config: PathBuf,
}

/// Full run from a dataset directory: writes `config.toml`, `losses.csv`,
/// periodic `ckpt_{iter:06}.bin` and the final `checkpoint.bin` into `out`.
/// With `resume`, continues from that checkpoint.
pub fn train(config: &TrainConfig, dataset_dir: &Path, pgt_dir: Option<&Path>, out: &Path, resume: Option<&Path>) -> Result<TrainOutputs, TrainError> {
    config.validate()?;
    let dataset = Dataset::load(dataset_dir)?;
    let cache = match pgt_dir {
        Some(dir) => Some(PseudoGtCache::load(dir)?),
        None => None,
    };
    let mut state = match resume {
        Some(p) => load_checkpoint(p)?,
        None => TrainState::init(&dataset, config),
    };
    std::fs::create_dir_all(out)?;
    let outputs = TrainOutputs { checkpoint: out.join("checkpoint.bin"), loss_log: out.join("losses.csv"), config: out.join("config.toml") };
    std::fs::write(&outputs.config, config.to_toml()?)?;
    let mut log = LossLog::open(&outputs.loss_log, resume.map(|_| state.iteration))?;
    let data = TrainData { dataset: &dataset, pseudo_gt: cache.as_ref() };
    run(&mut state, &data, config, |s, b| {
        log.append(b)?;
        if config.checkpoint_every > 0 && s.iteration % config.checkpoint_every == 0 && s.iteration < config.iterations {
            log.flush()?;
            save_checkpoint(s, &out.join(format!("ckpt_{:06}.bin", s.iteration)))?;
        }
        Ok(())
    })?;
    log.flush()?;
    save_checkpoint(&state, &outputs.checkpoint)?;
    Ok(outputs)
}

/// Mean over voxels and adjacent frame pairs of the squared difference of
/// activated foreground densities.
pub fn foreground_temporal_variation(params: &RadianceFieldParams) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for pair in params.fg.windows(2) {
        for v in 0..pair[0].voxel_count() {
            let a = crate::field::softplus(pair[0].data[v * CHANNELS] as f64);
            let b = crate::field::softplus(pair[1].data[v * CHANNELS] as f64);
            sum += (b - a) * (b - a);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}
