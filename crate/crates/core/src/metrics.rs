//! Image metrics (PSNR, SSIM, mask IoU), pixel-error heatmaps, and the
//! held-out evaluation over the 12 elevation-0 dome views.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::RadianceFieldParams;
use crate::harness::{dome_dir_name, eval_azimuths, Dataset, HarnessError};
use crate::image_io::{GrayImage, ImageBuffer, ImageError};
use crate::render::{render_image, RenderError, RenderMode, RenderSettings};
use crate::sampling::{mask_bbox, pad_bbox, BBox, MASK_THRESHOLD};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
/// Padding around the ground-truth mask box for foreground-region PSNR.
pub const FG_REGION_PAD: u32 = 4;

/// Heatmap color stops, evenly spaced over normalized error 0..1:
/// black, blue, red, yellow, white.
pub const HEATMAP_STOPS: [[f32; 3]; 5] = [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 1.0]];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image too small for SSIM: {0}x{1}")]
    TooSmall(u32, u32),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

fn same_shape(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), MetricsError> {
    a.same_shape(b).map_err(|e| MetricsError::ShapeMismatch(e.to_string()))
}

/// PSNR in dB, or the marker for identical inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Psnr {
    Db(f64),
    Infinite,
}

impl Psnr {
    fn from_mse(mse: f64) -> Self {
        if mse == 0.0 {
            Psnr::Infinite
        } else {
            Psnr::Db(10.0 * (1.0 / mse).log10())
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Psnr::Db(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Psnr::Infinite)
    }

    /// Mean of finite values; any infinite entry makes the mean infinite.
    pub fn mean(values: &[Psnr]) -> Psnr {
        if values.iter().any(Psnr::is_infinite) {
            return Psnr::Infinite;
        }
        Psnr::Db(values.iter().map(Psnr::value).sum::<f64>() / values.len() as f64)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

fn mse_over(a: &ImageBuffer, b: &ImageBuffer, pixels: impl Iterator<Item = usize>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for i in pixels {
        for c in 0..3 {
            let d = a.data[i][c] as f64 - b.data[i][c] as f64;
            sum += d * d;
        }
        count += 3;
    }
    sum / count as f64
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<Psnr, MetricsError> {
    same_shape(a, b)?;
    Ok(Psnr::from_mse(mse_over(a, b, 0..a.data.len())))
}

/// PSNR restricted to an inclusive pixel box.
pub fn psnr_in_box(a: &ImageBuffer, b: &ImageBuffer, bbox: BBox) -> Result<Psnr, MetricsError> {
    same_shape(a, b)?;
    let w = a.width;
    let pixels = (bbox.y0..=bbox.y1).flat_map(move |y| (bbox.x0..=bbox.x1).map(move |x| (y * w + x) as usize));
    Ok(Psnr::from_mse(mse_over(a, b, pixels)))
}

fn ssim_kernel() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sums over every fully contained window.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM (Gaussian window, dynamic range 1), averaged over channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricsError> {
    same_shape(a, b)?;
    if (a.width as usize) < SSIM_WINDOW || (a.height as usize) < SSIM_WINDOW {
        return Err(MetricsError::TooSmall(a.width, a.height));
    }
    let (w, h) = (a.width as usize, a.height as usize);
    let k = ssim_kernel();
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data.iter().map(|p| p[c] as f64).collect();
        let y: Vec<f64> = b.data.iter().map(|p| p[c] as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|v| filter_valid(v, w, h, &k));
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (vx, vy, cov) = (sxx[i] - mx[i] * mx[i], syy[i] - my[i] * my[i], sxy[i] - mx[i] * my[i]);
            sum += ((2.0 * mx[i] * my[i] + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((mx[i] * mx[i] + my[i] * my[i] + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / 3.0)
}

fn ramp(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0) * (HEATMAP_STOPS.len() - 1) as f32;
    let i = (v.floor() as usize).min(HEATMAP_STOPS.len() - 2);
    let f = v - i as f32;
    std::array::from_fn(|c| HEATMAP_STOPS[i][c] * (1.0 - f) + HEATMAP_STOPS[i + 1][c] * f)
}

/// Per-pixel squared error (summed over channels), normalized to the image
/// maximum and mapped through [`HEATMAP_STOPS`].
pub fn error_heatmap(a: &ImageBuffer, b: &ImageBuffer) -> Result<ImageBuffer, MetricsError> {
    same_shape(a, b)?;
    let err: Vec<f32> = a.data.iter().zip(&b.data).map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum()).collect();
    let max = err.iter().copied().fold(0.0f32, f32::max);
    let mut out = ImageBuffer::new(a.width, a.height);
    for (o, e) in out.data.iter_mut().zip(&err) {
        *o = ramp(if max > 0.0 { e / max } else { 0.0 });
    }
    Ok(out)
}

/// IoU of two masks thresholded at 0.5. Two empty masks give 1.
pub fn mask_iou(pred: &GrayImage, gt: &GrayImage) -> Result<f64, MetricsError> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(MetricsError::ShapeMismatch(format!("{}x{} vs {}x{}", pred.width, pred.height, gt.width, gt.height)));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.data.iter().zip(&gt.data) {
        let (p, g) = (*p > MASK_THRESHOLD, *g > MASK_THRESHOLD);
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// PSNR over the ground-truth mask box padded by [`FG_REGION_PAD`]; `None`
/// when the mask is empty.
pub fn foreground_psnr(pred: &ImageBuffer, gt: &ImageBuffer, gt_mask: &GrayImage) -> Result<Option<Psnr>, MetricsError> {
    match mask_bbox(gt_mask, MASK_THRESHOLD) {
        Some(b) => Ok(Some(psnr_in_box(pred, gt, pad_bbox(b, FG_REGION_PAD, gt.width, gt.height))?)),
        None => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetric {
    /// `t{TTTT}_e{EE}_a{+AA}`.
    pub view_id: String,
    pub frame: usize,
    pub elevation: f64,
    pub azimuth: f64,
    pub psnr: Psnr,
    pub ssim: f64,
    pub fg_psnr: Option<Psnr>,
    pub mask_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tag: Option<String>,
    pub views: Vec<ViewMetric>,
    pub mean_psnr: Psnr,
    pub mean_ssim: f64,
    pub mean_fg_psnr: Option<Psnr>,
    pub mean_mask_iou: Option<f64>,
}

impl MetricReport {
    pub fn from_views(tag: Option<String>, views: Vec<ViewMetric>) -> Self {
        let n = views.len() as f64;
        let psnrs: Vec<Psnr> = views.iter().map(|v| v.psnr).collect();
        let fg: Vec<Psnr> = views.iter().filter_map(|v| v.fg_psnr).collect();
        let ious: Vec<f64> = views.iter().filter_map(|v| v.mask_iou).collect();
        Self {
            tag,
            mean_psnr: Psnr::mean(&psnrs),
            mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
            mean_fg_psnr: (!fg.is_empty()).then(|| Psnr::mean(&fg)),
            mean_mask_iou: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
            views,
        }
    }

    pub const CSV_HEADER: &'static str = "tag,view_id,frame,elevation,azimuth,psnr,ssim,fg_psnr,mask_iou";

    pub fn to_csv(&self) -> String {
        let tag = self.tag.as_deref().unwrap_or("");
        let opt = |v: Option<String>| v.unwrap_or_default();
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for v in &self.views {
            s += &format!(
                "{tag},{},{},{},{},{},{:.6},{},{}\n",
                v.view_id,
                v.frame,
                v.elevation,
                v.azimuth,
                v.psnr,
                v.ssim,
                opt(v.fg_psnr.map(|p| p.to_string())),
                opt(v.mask_iou.map(|i| format!("{i:.6}")))
            );
        }
        s += &format!(
            "{tag},mean,,,,{},{:.6},{},{}\n",
            self.mean_psnr,
            self.mean_ssim,
            opt(self.mean_fg_psnr.map(|p| p.to_string())),
            opt(self.mean_mask_iou.map(|i| format!("{i:.6}")))
        );
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        if let Some(tag) = &self.tag {
            s += &format!("[{tag}]\n");
        }
        s += &format!("{:<18} {:>9} {:>8} {:>9} {:>8}\n", "view", "psnr", "ssim", "fg_psnr", "iou");
        let fmt_opt_p = |p: Option<Psnr>| p.map_or("-".to_string(), |p| p.to_string());
        let fmt_opt_f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        for v in &self.views {
            s += &format!("{:<18} {:>9} {:>8.4} {:>9} {:>8}\n", v.view_id, v.psnr.to_string(), v.ssim, fmt_opt_p(v.fg_psnr), fmt_opt_f(v.mask_iou));
        }
        s += &format!(
            "{:<18} {:>9} {:>8.4} {:>9} {:>8}\n",
            "mean",
            self.mean_psnr.to_string(),
            self.mean_ssim,
            fmt_opt_p(self.mean_fg_psnr),
            fmt_opt_f(self.mean_mask_iou)
        );
        s
    }
}

pub fn view_id(t: usize, elevation: f64, azimuth: f64) -> String {
    format!("t{t:04}_{}", dome_dir_name(elevation, azimuth))
}

/// `(frame, azimuth)` pairs of the held-out views for the given frames.
pub fn eval_views(frames: &[usize]) -> Vec<(usize, f64)> {
    frames.iter().flat_map(|&t| eval_azimuths().into_iter().map(move |a| (t, a))).collect()
}

fn score(t: usize, azimuth: f64, pred: &ImageBuffer, pred_mask: Option<&GrayImage>, gt: &ImageBuffer, gt_mask: &GrayImage) -> Result<ViewMetric, MetricsError> {
    Ok(ViewMetric {
        view_id: view_id(t, 0.0, azimuth),
        frame: t,
        elevation: 0.0,
        azimuth,
        psnr: psnr(pred, gt)?,
        ssim: ssim(pred, gt)?,
        fg_psnr: foreground_psnr(pred, gt, gt_mask)?,
        mask_iou: pred_mask.map(|m| mask_iou(m, gt_mask)).transpose()?,
    })
}

/// Renders the held-out views from the field and scores them against the
/// dome ground truth. Predictions are quantized to 8 bits first, like the
/// ground truth.
pub fn evaluate_field(
    dataset: &Dataset,
    params: &RadianceFieldParams,
    frames: &[usize],
    settings: &RenderSettings,
    seed: u64,
    tag: Option<String>,
) -> Result<MetricReport, MetricsError> {
    let views = eval_views(frames)
        .into_par_iter()
        .map(|(t, a)| {
            let (pose, gt, gt_mask) = dataset.dome_gt(t, 0.0, a)?;
            let (pred, _) = render_image(&pose, params, t, RenderMode::Full, settings, seed)?;
            let (_, fg_alpha) = render_image(&pose, params, t, RenderMode::ForegroundOnly, settings, seed)?;
            score(t, a, &pred.quantized(), Some(&fg_alpha), &gt, &gt_mask)
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(MetricReport::from_views(tag, views))
}

/// Scores prediction images laid out like the dataset's dome directory
/// (`dome/e00_a{+AA}/{t:04}.png`, optional `{t:04}_mask.png`).
pub fn evaluate_predictions(dataset: &Dataset, pred_root: &Path, frames: &[usize], tag: Option<String>) -> Result<MetricReport, MetricsError> {
    let views = eval_views(frames)
        .into_par_iter()
        .map(|(t, a)| {
            let (_, gt, gt_mask) = dataset.dome_gt(t, 0.0, a)?;
            let dir = pred_root.join("dome").join(dome_dir_name(0.0, a));
            let pred = ImageBuffer::load_png(&dir.join(format!("{t:04}.png")))?;
            let mask_path = dir.join(format!("{t:04}_mask.png"));
            let pred_mask = if mask_path.is_file() { Some(GrayImage::load_png(&mask_path)?) } else { None };
            score(t, a, &pred, pred_mask.as_ref(), &gt, &gt_mask)
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(MetricReport::from_views(tag, views))
}
