use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dynfield::harness::{default_dome, gen_scene, write_dataset, Dataset, DatasetManifest, ObjectSurface, PseudoGtCache};
use dynfield::metrics::{error_heatmap, evaluate_field, evaluate_predictions, MetricReport};
use dynfield::render::{render_image, RenderMode, RenderSettings};
use dynfield::sampling::SamplingStrategy;
use dynfield::splat::{fit_prior, GaussianSet};
use dynfield::trainer::{load_checkpoint, train, LossToggles, TrainConfig};

/// Dynamic radiance fields supervised at unseen viewpoints by a Gaussian prior.
#[derive(Parser)]
#[command(name = "dynfield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write its dataset.
    GenScene(GenSceneArgs),
    /// Fit a Gaussian prior to the dataset's object.
    FitPrior(FitPriorArgs),
    /// Rasterize the prior into the pseudo ground-truth cache.
    Pgt(PgtArgs),
    /// Train a field.
    Train(TrainArgs),
    /// Render one dome view from a checkpoint.
    Render(RenderArgs),
    /// Score the 12 held-out views.
    Eval(EvalArgs),
    /// Train and evaluate across sampling strategies and loss toggles.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenSceneArgs {
    /// bouncer or spinner
    #[arg(long, default_value = "bouncer")]
    scene: String,
    #[arg(long, default_value_t = 24)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArg {
    /// Dataset directory or its manifest.json.
    #[arg(long, alias = "data")]
    manifest: PathBuf,
}

impl DataArg {
    fn dir(&self) -> &Path {
        if self.manifest.is_file() {
            self.manifest.parent().unwrap_or(Path::new("."))
        } else {
            &self.manifest
        }
    }
}

#[derive(Args)]
struct FitPriorArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long, default_value_t = 2000)]
    gaussians: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PgtArgs {
    #[command(flatten)]
    data: DataArg,
    /// Prior JSON from fit-prior.
    #[arg(long)]
    prior: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Dome azimuths in degrees (default -45..45 step 5).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    azimuths: Option<Vec<f64>>,
    /// Dome elevations in degrees (default 0,15,30).
    #[arg(long, value_delimiter = ',')]
    elevations: Option<Vec<f64>>,
}

#[derive(Args, Clone)]
struct TrainOverrides {
    /// TOML config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    rays_primary: Option<usize>,
    #[arg(long)]
    rays_nv: Option<usize>,
    #[arg(long)]
    sr_patches: Option<usize>,
    #[arg(long)]
    nv_start: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Weight of the temporal continuity term.
    #[arg(long)]
    lambda_cont: Option<f64>,
}

impl TrainOverrides {
    fn build(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(if let Some(v) = self.$flag { c.$field = v; })*};
        }
        set!(iterations => iterations, seed => seed, n_samples => n_samples, rays_primary => rays_per_iter_primary,
             rays_nv => rays_per_iter_nv, sr_patches => sr_patches, checkpoint_every => checkpoint_every, learning_rate => learning_rate,
             lambda_cont => lambda_cont);
        if let Some(v) = self.nv_start {
            c.nv_start_iteration = Some(v);
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArg,
    /// Pseudo-GT cache directory (required when novel-view terms are on).
    #[arg(long)]
    pgt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// global, mask, blurred or padded
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long, default_value_t = 2)]
    pad: u32,
    /// Enabled loss terms, e.g. `rec,cont,sr,nv_c,nv_sigma` or `all`.
    #[arg(long)]
    loss_mask: Option<String>,
    /// Checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 1)]
    frame: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    azimuth: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    elevation: f64,
    #[arg(long, default_value_t = 128)]
    n_samples: usize,
    /// Render the foreground branch only.
    #[arg(long)]
    fg_only: bool,
    /// Output PNG; the opacity goes beside it as `<stem>_alpha.png`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArg,
    /// Checkpoint to render the held-out views from.
    #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
    ckpt: Option<PathBuf>,
    /// Directory of predictions laid out like the dataset's dome folder.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Frames to evaluate (default: all).
    #[arg(long, value_delimiter = ',')]
    frames: Option<Vec<usize>>,
    #[arg(long, default_value_t = 128)]
    n_samples: usize,
    /// Write the report as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write error heatmaps into this directory (checkpoint mode).
    #[arg(long)]
    heatmaps: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    pgt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Strategies to compare.
    #[arg(long, value_delimiter = ',', default_value = "padded")]
    strategy: Vec<String>,
    #[arg(long, default_value_t = 2)]
    pad: u32,
    /// Loss-term sets to compare, separated by `;` (each as in `train --loss-mask`).
    #[arg(long, default_value = "all")]
    loss_mask: String,
    #[arg(long, value_delimiter = ',')]
    frames: Option<Vec<usize>>,
}

fn frames_or_all(frames: &Option<Vec<usize>>, manifest: &DatasetManifest) -> Result<Vec<usize>> {
    let frames = frames.clone().unwrap_or_else(|| (1..=manifest.frames).collect());
    if let Some(bad) = frames.iter().find(|t| !(1..=manifest.frames).contains(*t)) {
        bail!("frame {bad} outside 1..={}", manifest.frames);
    }
    Ok(frames)
}

fn print_report(report: &MetricReport, csv: Option<&Path>) -> Result<()> {
    print!("{}", report.table());
    if let Some(path) = csv {
        std::fs::write(path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn gen_scene_cmd(a: GenSceneArgs) -> Result<()> {
    let scene = gen_scene(&a.scene, a.frames, a.seed)?;
    let m = write_dataset(&scene, &a.out)?;
    println!("wrote {} frames and {} dome views to {}", m.primary.len(), m.dome.len(), a.out.display());
    Ok(())
}

fn fit_prior_cmd(a: FitPriorArgs) -> Result<()> {
    let m = DatasetManifest::load(a.data.dir())?;
    let scene = gen_scene(&m.scene.to_string(), m.frames, m.seed)?;
    let set = fit_prior(&ObjectSurface(scene.shape), a.gaussians, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    set.save_json(&a.out)?;
    println!("fitted {} Gaussians to {} -> {}", set.len(), m.scene, a.out.display());
    Ok(())
}

fn pgt_cmd(a: PgtArgs) -> Result<()> {
    let m = DatasetManifest::load(a.data.dir())?;
    let prior = GaussianSet::load_json(&a.prior)?;
    let (az, el) = default_dome();
    let cache = PseudoGtCache::build(&prior, &m, &a.azimuths.unwrap_or(az), &a.elevations.unwrap_or(el))?;
    cache.write(&a.out)?;
    println!("wrote {} pseudo views for {} frames to {}", cache.dome.len(), cache.frames(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut config = a.overrides.build()?;
    if let Some(s) = &a.strategy {
        config.strategy = SamplingStrategy::parse(s, a.pad).map_err(anyhow::Error::msg)?;
    }
    if let Some(mask) = &a.loss_mask {
        config.losses = LossToggles::parse(mask).map_err(anyhow::Error::msg)?;
    }
    println!("training seed={} iterations={} strategy={} losses={}", config.seed, config.iterations, config.strategy, config.losses.tag());
    let out = train(&config, a.data.dir(), a.pgt.as_deref(), &a.out, a.resume.as_deref())?;
    println!("checkpoint {}\nloss log {}", out.checkpoint.display(), out.loss_log.display());
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let m = DatasetManifest::load(a.data.dir())?;
    let state = load_checkpoint(&a.ckpt)?;
    let pose = m.view_pose(a.frame, a.elevation, a.azimuth)?;
    let mode = if a.fg_only { RenderMode::ForegroundOnly } else { RenderMode::Full };
    let settings = RenderSettings { n_samples: a.n_samples, stratified: false };
    let (img, alpha) = render_image(&pose, &state.params, a.frame, mode, &settings, 0)?;
    img.save_png(&a.out)?;
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("render");
    alpha.save_png(&a.out.with_file_name(format!("{stem}_alpha.png")))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let dataset = Dataset::load(a.data.dir())?;
    let frames = frames_or_all(&a.frames, &dataset.manifest)?;
    let report = match (&a.ckpt, &a.pred) {
        (Some(ckpt), _) => {
            let state = load_checkpoint(ckpt)?;
            let settings = RenderSettings { n_samples: a.n_samples, stratified: false };
            if let Some(dir) = &a.heatmaps {
                for &t in &frames {
                    for az in dynfield::harness::eval_azimuths() {
                        let (pose, gt, _) = dataset.dome_gt(t, 0.0, az)?;
                        let (pred, _) = render_image(&pose, &state.params, t, RenderMode::Full, &settings, 0)?;
                        let id = dynfield::metrics::view_id(t, 0.0, az);
                        pred.quantized().save_png(&dir.join(format!("{id}_pred.png")))?;
                        error_heatmap(&pred.quantized(), &gt)?.save_png(&dir.join(format!("{id}_heat.png")))?;
                    }
                }
            }
            evaluate_field(&dataset, &state.params, &frames, &settings, 0, None)?
        }
        (None, Some(pred)) => evaluate_predictions(&dataset, pred, &frames, None)?,
        (None, None) => unreachable!("clap enforces one of --ckpt/--pred"),
    };
    print_report(&report, a.csv.as_deref())
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let base = a.overrides.build()?;
    let dataset = Dataset::load(a.data.dir())?;
    let frames = frames_or_all(&a.frames, &dataset.manifest)?;
    let mut csv = String::new();
    for strategy in &a.strategy {
        let strategy = SamplingStrategy::parse(strategy, a.pad).map_err(anyhow::Error::msg)?;
        for mask in a.loss_mask.split(';') {
            let losses = LossToggles::parse(mask).map_err(anyhow::Error::msg)?;
            let config = TrainConfig { strategy, losses, ..base.clone() };
            let tag = format!("{}__{}", strategy.tag(), losses.tag());
            let run_dir = a.out.join(&tag);
            let out = train(&config, a.data.dir(), Some(&a.pgt), &run_dir, None)?;
            let state = load_checkpoint(&out.checkpoint)?;
            let report = evaluate_field(&dataset, &state.params, &frames, &config.render_settings(), 0, Some(tag.clone()))?;
            print_report(&report, Some(&run_dir.join("report.csv")))?;
            let body = report.to_csv();
            csv += if csv.is_empty() { &body } else { body.split_once('\n').map_or("", |(_, rest)| rest) };
        }
    }
    std::fs::write(a.out.join("reports.csv"), csv)?;
    println!("wrote {}", a.out.join("reports.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenScene(a) => gen_scene_cmd(a),
        Command::FitPrior(a) => fit_prior_cmd(a),
        Command::Pgt(a) => pgt_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
