//! Pixel sampling for novel-view supervision: whole-frame, mask-only,
//! blurred-mask and padded-bounding-box strategies.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image_io::GrayImage;

pub const MASK_THRESHOLD: f32 = 0.5;
pub const DEFAULT_BLUR_SIGMA: f64 = 2.0;
pub const DEFAULT_PAD: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingStrategy {
    Global,
    MaskOnly,
    BlurredMask,
    PaddedBBox { pad: u32 },
}

impl Default for SamplingStrategy {
    fn default() -> Self {
        SamplingStrategy::PaddedBBox { pad: DEFAULT_PAD }
    }
}

impl SamplingStrategy {
    pub fn tag(&self) -> String {
        match self {
            SamplingStrategy::Global => "global".into(),
            SamplingStrategy::MaskOnly => "mask".into(),
            SamplingStrategy::BlurredMask => "blurred".into(),
            SamplingStrategy::PaddedBBox { pad } => format!("padded{pad}"),
        }
    }

    /// Parses a CLI strategy name; `pad` applies to `padded`.
    pub fn parse(name: &str, pad: u32) -> Result<Self, String> {
        match name {
            "global" => Ok(Self::Global),
            "mask" => Ok(Self::MaskOnly),
            "blurred" => Ok(Self::BlurredMask),
            "padded" => Ok(Self::PaddedBBox { pad }),
            other => other
                .strip_prefix("padded")
                .and_then(|p| p.parse().ok())
                .map(|pad| Self::PaddedBBox { pad })
                .ok_or_else(|| format!("unknown strategy `{other}` (expected global|mask|blurred|padded)")),
        }
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for SamplingStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s, DEFAULT_PAD)
    }
}

/// Inclusive pixel box `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
}

impl BBox {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) as usize * (self.y1 - self.y0 + 1) as usize
    }
}

/// Tightest box around pixels with `mask > threshold`.
pub fn mask_bbox(mask: &GrayImage, threshold: f32) -> Option<BBox> {
    let mut b: Option<BBox> = None;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) > threshold {
                b = Some(match b {
                    None => BBox { x0: x, x1: x, y0: y, y1: y },
                    Some(b) => BBox { x0: b.x0.min(x), x1: b.x1.max(x), y0: b.y0.min(y), y1: b.y1.max(y) },
                });
            }
        }
    }
    b
}

/// Grows `b` by `pad` on every side, clamped to a `width x height` raster.
pub fn pad_bbox(b: BBox, pad: u32, width: u32, height: u32) -> BBox {
    BBox {
        x0: b.x0.saturating_sub(pad),
        y0: b.y0.saturating_sub(pad),
        x1: (b.x1 + pad).min(width - 1),
        y1: (b.y1 + pad).min(height - 1),
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with radius `ceil(3 sigma)` and clamped edges.
pub fn gaussian_blur_mask(mask: &GrayImage, sigma: f64) -> GrayImage {
    assert!(sigma > 0.0, "blur sigma must be positive");
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut tmp = vec![0.0f64; mask.data.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[(y * w + x) as usize] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * mask.data[(y * w + (x + i as i64 - r).clamp(0, w - 1)) as usize] as f64)
                .sum();
        }
    }
    let mut out = GrayImage::new(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[((y + i as i64 - r).clamp(0, h - 1) * w + x) as usize])
                .sum();
            out.data[(y * w + x) as usize] = v.clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Sampled pixel coordinates, unique within the batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelBatch {
    pub pixels: Vec<(u32, u32)>,
    pub strategy: SamplingStrategy,
}

/// Pixels eligible under `strategy`, in raster order. Empty regions fall
/// back to the whole raster.
pub fn strategy_region(strategy: SamplingStrategy, mask: &GrayImage) -> Vec<(u32, u32)> {
    let all = || (0..mask.height).flat_map(|y| (0..mask.width).map(move |x| (x, y)));
    let region: Vec<(u32, u32)> = match strategy {
        SamplingStrategy::Global => all().collect(),
        SamplingStrategy::MaskOnly => all().filter(|&(x, y)| mask.get(x, y) > MASK_THRESHOLD).collect(),
        SamplingStrategy::BlurredMask => {
            let binary = GrayImage {
                width: mask.width,
                height: mask.height,
                data: mask.data.iter().map(|&v| if v > MASK_THRESHOLD { 1.0 } else { 0.0 }).collect(),
            };
            let blurred = gaussian_blur_mask(&binary, DEFAULT_BLUR_SIGMA);
            all().filter(|&(x, y)| blurred.get(x, y) > 0.0).collect()
        }
        SamplingStrategy::PaddedBBox { pad } => match mask_bbox(mask, MASK_THRESHOLD) {
            Some(b) => {
                let b = pad_bbox(b, pad, mask.width, mask.height);
                all().filter(|&(x, y)| b.contains(x, y)).collect()
            }
            None => Vec::new(),
        },
    };
    if region.is_empty() {
        all().collect()
    } else {
        region
    }
}

/// Up to `n` distinct pixels drawn uniformly from the strategy region.
pub fn sample_pixels<R: Rng + ?Sized>(strategy: SamplingStrategy, mask: &GrayImage, n: usize, rng: &mut R) -> PixelBatch {
    let region = strategy_region(strategy, mask);
    let amount = n.min(region.len());
    let pixels = rand::seq::index::sample(rng, region.len(), amount).into_iter().map(|i| region[i]).collect();
    PixelBatch { pixels, strategy }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn disk_mask(w: u32, cx: f64, cy: f64, r: f64) -> GrayImage {
        let mut m = GrayImage::new(w, w);
        for y in 0..w {
            for x in 0..w {
                if ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() <= r {
                    m.set(x, y, 1.0);
                }
            }
        }
        m
    }

    #[test]
    fn bbox_cases() {
        assert_eq!(mask_bbox(&GrayImage::new(10, 10), 0.5), None);
        let mut m = GrayImage::new(10, 10);
        m.set(7, 3, 0.9);
        assert_eq!(mask_bbox(&m, 0.5), Some(BBox { x0: 7, x1: 7, y0: 3, y1: 3 }));
    }

    #[test]
    fn bbox_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut m = GrayImage::new(23, 17);
            for v in &mut m.data {
                *v = if rng.random::<f64>() < 0.05 { 1.0 } else { 0.0 };
            }
            let pts: Vec<(u32, u32)> = (0..17).flat_map(|y| (0..23).map(move |x| (x, y))).filter(|&(x, y)| m.get(x, y) > 0.5).collect();
            let expected = (!pts.is_empty()).then(|| BBox {
                x0: pts.iter().map(|p| p.0).min().unwrap(),
                x1: pts.iter().map(|p| p.0).max().unwrap(),
                y0: pts.iter().map(|p| p.1).min().unwrap(),
                y1: pts.iter().map(|p| p.1).max().unwrap(),
            });
            assert_eq!(mask_bbox(&m, 0.5), expected);
        }
    }

    #[test]
    fn padding() {
        let b = BBox { x0: 10, x1: 20, y0: 10, y1: 20 };
        assert_eq!(pad_bbox(b, 0, 64, 64), b);
        assert_eq!(pad_bbox(b, 2, 64, 64), BBox { x0: 8, x1: 22, y0: 8, y1: 22 });
        let edge = BBox { x0: 0, x1: 5, y0: 1, y1: 63 };
        assert_eq!(pad_bbox(edge, 2, 64, 64), BBox { x0: 0, x1: 7, y0: 0, y1: 63 });
    }

    #[test]
    fn blur_constant_and_impulse() {
        let mut m = GrayImage::new(20, 20);
        m.data.fill(0.7);
        let b = gaussian_blur_mask(&m, 1.5);
        assert!(b.data.iter().all(|v| (v - 0.7).abs() < 1e-6));

        let mut imp = GrayImage::new(21, 21);
        imp.set(10, 10, 1.0);
        let b = gaussian_blur_mask(&imp, 2.0);
        let sum: f32 = b.data.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        for d in 1..6 {
            assert!((b.get(10 + d, 10) - b.get(10 - d, 10)).abs() < 1e-9);
            assert!((b.get(10, 10 + d) - b.get(10 + d, 10)).abs() < 1e-9);
        }
    }

    #[test]
    fn blur_matches_dense_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = GrayImage::new(19, 15);
        for v in &mut m.data {
            *v = rng.random();
        }
        let sigma = 1.3;
        let b = gaussian_blur_mask(&m, sigma);
        let r = (3.0 * sigma).ceil() as i64;
        let mut norm = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                norm += (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            }
        }
        for y in 0..15i64 {
            for x in 0..19i64 {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let w = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp() / norm;
                        acc += w * m.get((x + dx).clamp(0, 18) as u32, (y + dy).clamp(0, 14) as u32) as f64;
                    }
                }
                assert!((acc - b.get(x as u32, y as u32) as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn padded_on_full_mask_is_global() {
        let mut m = GrayImage::new(16, 16);
        m.data.fill(1.0);
        assert_eq!(strategy_region(SamplingStrategy::PaddedBBox { pad: 2 }, &m), strategy_region(SamplingStrategy::Global, &m));
    }

    #[test]
    fn mask_only_membership_and_fallback() {
        let m = disk_mask(32, 16.0, 16.0, 5.0);
        let batch = sample_pixels(SamplingStrategy::MaskOnly, &m, 40, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(batch.pixels.len(), 40);
        assert!(batch.pixels.iter().all(|&(x, y)| m.get(x, y) > 0.5));
        let unique: HashSet<_> = batch.pixels.iter().collect();
        assert_eq!(unique.len(), 40);

        let empty = GrayImage::new(8, 8);
        let b = sample_pixels(SamplingStrategy::MaskOnly, &empty, 100, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(b.pixels.len(), 64);
    }

    #[test]
    fn region_supersets() {
        let m = disk_mask(48, 20.0, 25.0, 7.0);
        let mask: HashSet<_> = strategy_region(SamplingStrategy::MaskOnly, &m).into_iter().collect();
        let padded: HashSet<_> = strategy_region(SamplingStrategy::PaddedBBox { pad: 2 }, &m).into_iter().collect();
        let blurred: HashSet<_> = strategy_region(SamplingStrategy::BlurredMask, &m).into_iter().collect();
        assert!(mask.is_subset(&padded) && mask.is_subset(&blurred));
        assert!(blurred.len() > mask.len());
    }

    #[test]
    fn reproducible_per_seed() {
        let m = disk_mask(32, 10.0, 12.0, 6.0);
        for s in [SamplingStrategy::Global, SamplingStrategy::MaskOnly, SamplingStrategy::BlurredMask, SamplingStrategy::PaddedBBox { pad: 2 }] {
            let a = sample_pixels(s, &m, 50, &mut ChaCha8Rng::seed_from_u64(4));
            let b = sample_pixels(s, &m, 50, &mut ChaCha8Rng::seed_from_u64(4));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn padded_uniform_over_region() {
        let m = disk_mask(32, 15.0, 15.0, 2.0);
        let region = strategy_region(SamplingStrategy::PaddedBBox { pad: 2 }, &m);
        assert_eq!(region.len(), 81);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut counts = std::collections::HashMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            let b = sample_pixels(SamplingStrategy::PaddedBBox { pad: 2 }, &m, 1, &mut rng);
            *counts.entry(b.pixels[0]).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 81);
        let p = 1.0 / 81.0;
        let expected = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 80 dof: 0.999 quantile is 124.8
        assert!(chi2 < 124.8, "chi2 {chi2}");
        let worst = counts.values().map(|&c| (c as f64 - expected).abs()).fold(0.0, f64::max);
        assert!(worst < 4.0 * sigma);
    }

    #[test]
    fn strategy_names() {
        assert_eq!("padded".parse::<SamplingStrategy>().unwrap(), SamplingStrategy::PaddedBBox { pad: 2 });
        assert_eq!(SamplingStrategy::parse("padded10", 2).unwrap(), SamplingStrategy::PaddedBBox { pad: 10 });
        assert_eq!(SamplingStrategy::parse("mask", 2).unwrap(), SamplingStrategy::MaskOnly);
        assert!(SamplingStrategy::parse("nope", 2).is_err());
    }
}
