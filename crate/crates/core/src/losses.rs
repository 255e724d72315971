//! Training objectives: primary-view reconstruction, foreground temporal
//! continuity, the patch super-resolution term, the two novel-view
//! pseudo-GT terms, and the scheduled total.
//!
//! Every loss returns its value together with the gradient w.r.t. its
//! direct inputs; the trainer pushes those through [`crate::render::backward`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{sigmoid, softplus, FieldError, RadianceFieldParams, CHANNELS};
use crate::render::Gradients;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn check_len(a: usize, b: usize, what: &str) -> Result<(), LossError> {
    if a != b {
        return Err(LossError::ShapeMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub cont: f64,
    pub nv_color: f64,
    pub nv_sigma: f64,
    pub sr: f64,
    /// Novel-view terms contribute from this iteration on.
    pub nv_start_iteration: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cont: 1.0, nv_color: 1.0, nv_sigma: 0.1, sr: 0.5, nv_start_iteration: 0 }
    }
}

impl LossWeights {
    pub fn nv_active(&self, iteration: usize) -> bool {
        iteration >= self.nv_start_iteration
    }
}

/// Unweighted loss terms for one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub rec: f64,
    pub cont: f64,
    pub sr: f64,
    pub nv_c: f64,
    pub nv_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub iteration: usize,
    pub rec: f64,
    pub cont: f64,
    pub sr: f64,
    pub nv_c: f64,
    pub nv_sigma: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "iteration,rec,cont,sr,nv_c,nv_sigma,total";

    /// Exact (round-trippable) decimal rendering.
    pub fn csv_row(&self) -> String {
        format!("{},{:?},{:?},{:?},{:?},{:?},{:?}", self.iteration, self.rec, self.cont, self.sr, self.nv_c, self.nv_sigma, self.total)
    }
}

/// Combines the terms; novel-view terms count only once the schedule is on.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights, iteration: usize) -> LossBreakdown {
    let mut total = terms.rec + weights.cont * terms.cont + weights.sr * terms.sr;
    if weights.nv_active(iteration) {
        total += weights.nv_color * terms.nv_c + weights.nv_sigma * terms.nv_sigma;
    }
    LossBreakdown {
        iteration,
        rec: terms.rec,
        cont: terms.cont,
        sr: terms.sr,
        nv_c: terms.nv_c,
        nv_sigma: terms.nv_sigma,
        total,
    }
}

/// Sum of squared RGB errors and its gradient w.r.t. the predictions.
pub fn loss_rec(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>), LossError> {
    check_len(pred.len(), gt.len(), "reconstruction batch")?;
    let mut loss = 0.0;
    let grads = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d: [f64; 3] = std::array::from_fn(|c| p[c] - g[c]);
            loss += d.iter().map(|v| v * v).sum::<f64>();
            d.map(|v| 2.0 * v)
        })
        .collect();
    Ok((loss, grads))
}

/// Squared activated-density differences between adjacent foreground grids
/// of the window `start, start+1, start+2`, summed over all voxels. When
/// `grads` is given, the gradient is accumulated into it.
pub fn loss_cont(params: &RadianceFieldParams, start: usize, grads: Option<&mut Gradients>) -> Result<f64, LossError> {
    loss_cont_weighted(params, start, 1.0, grads)
}

/// [`loss_cont`] with its gradient scaled by `weight` before accumulation.
pub fn loss_cont_weighted(params: &RadianceFieldParams, start: usize, weight: f64, mut grads: Option<&mut Gradients>) -> Result<f64, LossError> {
    for t in start..start + 3 {
        params.fg_grid(t)?;
    }
    let activated: Vec<Vec<(f64, f64)>> = (start..start + 3)
        .map(|t| {
            let g = params.fg_grid(t).expect("checked above");
            (0..g.voxel_count()).map(|v| {
                let r = g.data[v * CHANNELS] as f64;
                (softplus(r), sigmoid(r))
            }).collect()
        })
        .collect();
    let mut loss = 0.0;
    for (k, pair) in activated.windows(2).enumerate() {
        let t = start + k;
        for (v, (&(sa, da), &(sb, db))) in pair[0].iter().zip(&pair[1]).enumerate() {
            let diff = sb - sa;
            loss += diff * diff;
            if let Some(g) = grads.as_deref_mut() {
                if diff != 0.0 {
                    g.buffer_mut(t).add_channel(v, 0, -2.0 * weight * diff * da);
                    g.buffer_mut(t + 1).add_channel(v, 0, 2.0 * weight * diff * db);
                }
            }
        }
    }
    Ok(loss)
}

/// Rendered foreground prediction for one novel-view ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvPrediction {
    pub color: [f64; 3],
    pub fg_opacity: f64,
}

/// Pseudo-GT at the ray's pixel: premultiplied color and mask value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvTarget {
    pub rgb: [f64; 3],
    pub mask: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NvLoss {
    pub color: f64,
    pub sigma: f64,
    pub d_color: Vec<[f64; 3]>,
    pub d_fg_opacity: Vec<f64>,
}

pub fn loss_nv(pred: &[NvPrediction], target: &[NvTarget]) -> Result<NvLoss, LossError> {
    check_len(pred.len(), target.len(), "novel-view batch")?;
    let mut out = NvLoss { color: 0.0, sigma: 0.0, d_color: Vec::with_capacity(pred.len()), d_fg_opacity: Vec::with_capacity(pred.len()) };
    for (p, t) in pred.iter().zip(target) {
        let d: [f64; 3] = std::array::from_fn(|c| p.color[c] - t.rgb[c]);
        out.color += d.iter().map(|v| v * v).sum::<f64>();
        out.d_color.push(d.map(|v| 2.0 * v));
        let s = p.fg_opacity - t.mask;
        out.sigma += s * s;
        out.d_fg_opacity.push(2.0 * s);
    }
    Ok(out)
}

/// Small RGB image patch in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl Patch {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![[0.0; 3]; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut [f64; 3] {
        &mut self.data[y * self.width + x]
    }
}

/// One feature layer: flattened values and the neuron count behind `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayer {
    pub values: Vec<f64>,
}

impl FeatureLayer {
    pub fn neurons(&self) -> usize {
        self.values.len()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.neurons() as f64
    }
}

/// Differentiable map from a patch to feature layers.
pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, patch: &Patch) -> Vec<FeatureLayer>;
    /// Vector-Jacobian product: gradient w.r.t. the patch given one gradient
    /// vector per layer.
    fn backprop(&self, width: usize, height: usize, layer_grads: &[Vec<f64>]) -> Patch;
}

/// Identity layer only.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFeatures;

impl FeatureExtractor for IdentityFeatures {
    fn extract(&self, patch: &Patch) -> Vec<FeatureLayer> {
        vec![FeatureLayer { values: patch.data.iter().flatten().copied().collect() }]
    }

    fn backprop(&self, width: usize, height: usize, layer_grads: &[Vec<f64>]) -> Patch {
        let g = &layer_grads[0];
        Patch { width, height, data: g.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() }
    }
}

/// Identity plus forward-difference horizontal and vertical gradients.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientFeatures;

impl FeatureExtractor for GradientFeatures {
    fn extract(&self, p: &Patch) -> Vec<FeatureLayer> {
        let identity = p.data.iter().flatten().copied().collect();
        let mut horiz = Vec::with_capacity(p.width.saturating_sub(1) * p.height * 3);
        for y in 0..p.height {
            for x in 0..p.width.saturating_sub(1) {
                let (a, b) = (p.at(x, y), p.at(x + 1, y));
                horiz.extend((0..3).map(|c| b[c] - a[c]));
            }
        }
        let mut vert = Vec::with_capacity(p.width * p.height.saturating_sub(1) * 3);
        for y in 0..p.height.saturating_sub(1) {
            for x in 0..p.width {
                let (a, b) = (p.at(x, y), p.at(x, y + 1));
                vert.extend((0..3).map(|c| b[c] - a[c]));
            }
        }
        vec![FeatureLayer { values: identity }, FeatureLayer { values: horiz }, FeatureLayer { values: vert }]
    }

    fn backprop(&self, width: usize, height: usize, g: &[Vec<f64>]) -> Patch {
        let mut out = IdentityFeatures.backprop(width, height, &g[..1]);
        let mut i = 0;
        for y in 0..height {
            for x in 0..width.saturating_sub(1) {
                for c in 0..3 {
                    out.at_mut(x + 1, y)[c] += g[1][i];
                    out.at_mut(x, y)[c] -= g[1][i];
                    i += 1;
                }
            }
        }
        let mut i = 0;
        for y in 0..height.saturating_sub(1) {
            for x in 0..width {
                for c in 0..3 {
                    out.at_mut(x, y + 1)[c] += g[2][i];
                    out.at_mut(x, y)[c] -= g[2][i];
                    i += 1;
                }
            }
        }
        out
    }
}

/// Linear upsampling operator with an explicit transpose.
pub trait Upsampler: Send + Sync {
    fn factor(&self) -> usize;
    fn upsample(&self, low: &Patch) -> Patch;
    /// Transpose of [`Upsampler::upsample`].
    fn backprop(&self, grad_high: &Patch, low_width: usize, low_height: usize) -> Patch;
}

/// Separable bicubic (Keys, a = -0.5) interpolation with clamped borders.
#[derive(Debug, Clone, Copy)]
pub struct Bicubic {
    pub factor: usize,
}

impl Default for Bicubic {
    fn default() -> Self {
        Self { factor: 2 }
    }
}

fn keys(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

impl Bicubic {
    /// `(source index, weight)` taps for every output index along one axis.
    fn taps(&self, n_low: usize) -> Vec<[(usize, f64); 4]> {
        let f = self.factor as f64;
        (0..n_low * self.factor)
            .map(|o| {
                let src = (o as f64 + 0.5) / f - 0.5;
                let base = src.floor() as i64;
                std::array::from_fn(|k| {
                    let i = base - 1 + k as i64;
                    (i.clamp(0, n_low as i64 - 1) as usize, keys(src - i as f64))
                })
            })
            .collect()
    }
}

impl Upsampler for Bicubic {
    fn factor(&self) -> usize {
        self.factor
    }

    fn upsample(&self, low: &Patch) -> Patch {
        let (tx, ty) = (self.taps(low.width), self.taps(low.height));
        let mut rows = Patch::zeros(tx.len(), low.height);
        for y in 0..low.height {
            for (x, taps) in tx.iter().enumerate() {
                let px = rows.at_mut(x, y);
                for &(i, w) in taps {
                    let s = low.at(i, y);
                    (0..3).for_each(|c| px[c] += w * s[c]);
                }
            }
        }
        let mut out = Patch::zeros(tx.len(), ty.len());
        for (y, taps) in ty.iter().enumerate() {
            for x in 0..tx.len() {
                let mut acc = [0.0; 3];
                for &(i, w) in taps {
                    let s = rows.at(x, i);
                    (0..3).for_each(|c| acc[c] += w * s[c]);
                }
                *out.at_mut(x, y) = acc;
            }
        }
        out
    }

    fn backprop(&self, g: &Patch, low_width: usize, low_height: usize) -> Patch {
        let (tx, ty) = (self.taps(low_width), self.taps(low_height));
        let mut rows = Patch::zeros(g.width, low_height);
        for (y, taps) in ty.iter().enumerate() {
            for x in 0..g.width {
                let v = g.at(x, y);
                for &(i, w) in taps {
                    let r = rows.at_mut(x, i);
                    (0..3).for_each(|c| r[c] += w * v[c]);
                }
            }
        }
        let mut out = Patch::zeros(low_width, low_height);
        for y in 0..low_height {
            for (x, taps) in tx.iter().enumerate() {
                let v = rows.at(x, y);
                for &(i, w) in taps {
                    let o = out.at_mut(i, y);
                    (0..3).for_each(|c| o[c] += w * v[c]);
                }
            }
        }
        out
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// L1 pixel term plus `1/neurons`-weighted L1 feature terms between the
/// upsampled rendered patch and the reference patch. Returns the value and
/// the gradient w.r.t. the low-resolution rendered patch.
pub fn loss_sr(rendered: &Patch, reference: &Patch, upsampler: &dyn Upsampler, extractor: &dyn FeatureExtractor) -> Result<(f64, Patch), LossError> {
    let up = upsampler.upsample(rendered);
    if up.width != reference.width || up.height != reference.height {
        return Err(LossError::ShapeMismatch(format!(
            "upsampled {}x{} vs reference {}x{}",
            up.width, up.height, reference.width, reference.height
        )));
    }
    let mut loss = 0.0;
    let mut grad_up = Patch::zeros(up.width, up.height);
    for (i, (a, b)) in up.data.iter().zip(&reference.data).enumerate() {
        for c in 0..3 {
            let d = a[c] - b[c];
            loss += d.abs();
            grad_up.data[i][c] = sign(d);
        }
    }
    let (fa, fb) = (extractor.extract(&up), extractor.extract(reference));
    let mut layer_grads = Vec::with_capacity(fa.len());
    for (la, lb) in fa.iter().zip(&fb) {
        let w = la.weight();
        let mut g = Vec::with_capacity(la.values.len());
        for (a, b) in la.values.iter().zip(&lb.values) {
            loss += w * (a - b).abs();
            g.push(w * sign(a - b));
        }
        layer_grads.push(g);
    }
    let feat_grad = extractor.backprop(up.width, up.height, &layer_grads);
    for (g, f) in grad_up.data.iter_mut().zip(&feat_grad.data) {
        (0..3).for_each(|c| g[c] += f[c]);
    }
    Ok((loss, upsampler.backprop(&grad_up, rendered.width, rendered.height)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_patch(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Patch {
        Patch { width: w, height: h, data: (0..w * h).map(|_| [rng.random(), rng.random(), rng.random()]).collect() }
    }

    #[test]
    fn rec_cases() {
        let (l, g) = loss_rec(&[[0.3, 0.2, 0.1]], &[[0.3, 0.2, 0.1]]).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![[0.0; 3]]);
        let (l, _) = loss_rec(&[[0.6, 0.5, 0.5]], &[[0.5, 0.5, 0.5]]).unwrap();
        assert!((l - 0.01).abs() < 1e-12);
        assert!(matches!(loss_rec(&[[0.0; 3]], &[]), Err(LossError::ShapeMismatch(_))));
    }

    #[test]
    fn rec_batch_matches_per_ray_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Vec<[f64; 3]> = (0..50).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let g: Vec<[f64; 3]> = (0..50).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let mut oracle = 0.0;
        for i in 0..50 {
            for c in 0..3 {
                oracle += (p[i][c] - g[i][c]) * (p[i][c] - g[i][c]);
            }
        }
        assert!((loss_rec(&p, &g).unwrap().0 - oracle).abs() < 1e-12);
    }

    fn cont_params(frames: usize) -> RadianceFieldParams {
        RadianceFieldParams::uniform(Aabb::cube([0.0; 3], 1.0), [2, 2, 2], Aabb::cube([0.0; 3], 0.5), [3, 3, 3], frames, -1.0, 0.0)
    }

    #[test]
    fn cont_cases() {
        let mut p = cont_params(4);
        assert_eq!(loss_cont(&p, 1, None).unwrap(), 0.0);
        p.fg[1].data[5 * 4] = 2.0;
        let dsig = softplus(2.0) - softplus(-1.0);
        // window 1..=3: pairs (1,2) and (2,3) both see the changed voxel
        assert!((loss_cont(&p, 1, None).unwrap() - 2.0 * dsig * dsig).abs() < 1e-12);
        // window 2..=4: only pair (2,3)
        assert!((loss_cont(&p, 2, None).unwrap() - dsig * dsig).abs() < 1e-12);
        assert!(loss_cont(&p, 3, None).is_err());
        assert!(loss_cont(&p, 0, None).is_err());
    }

    #[test]
    fn cont_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = cont_params(3);
        for g in &mut p.fg {
            for v in g.data.iter_mut() {
                *v = rng.random_range(-2.0..2.0);
            }
        }
        let mut grads = Gradients::zeros_like(&p);
        loss_cont(&p, 1, Some(&mut grads)).unwrap();
        for t in 1..=3 {
            for v in [0usize, 7, 13, 26] {
                let mut hi = p.clone();
                let mut lo = p.clone();
                hi.fg[t - 1].data[v * 4] += 1e-3;
                lo.fg[t - 1].data[v * 4] -= 1e-3;
                let h = hi.fg[t - 1].data[v * 4] as f64 - lo.fg[t - 1].data[v * 4] as f64;
                let fd = (loss_cont(&hi, 1, None).unwrap() - loss_cont(&lo, 1, None).unwrap()) / h;
                let an = grads.get(t, v, 0);
                assert!((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8) < 1e-4, "t{t} v{v}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn nv_cases() {
        let perfect = loss_nv(&[NvPrediction { color: [0.2, 0.3, 0.4], fg_opacity: 0.7 }], &[NvTarget { rgb: [0.2, 0.3, 0.4], mask: 0.7 }]).unwrap();
        assert_eq!((perfect.color, perfect.sigma), (0.0, 0.0));
        let empty_mask = loss_nv(&[NvPrediction { color: [0.0; 3], fg_opacity: 0.3 }], &[NvTarget { rgb: [0.0; 3], mask: 0.0 }]).unwrap();
        assert!((empty_mask.sigma - 0.09).abs() < 1e-12);
        assert!(loss_nv(&[], &[NvTarget { rgb: [0.0; 3], mask: 0.0 }]).is_err());
    }

    #[test]
    fn nv_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let preds: Vec<NvPrediction> = (0..40).map(|_| NvPrediction { color: [rng.random(), rng.random(), rng.random()], fg_opacity: rng.random() }).collect();
        let targets: Vec<NvTarget> = (0..40).map(|_| NvTarget { rgb: [rng.random(), rng.random(), rng.random()], mask: rng.random() }).collect();
        let l = loss_nv(&preds, &targets).unwrap();
        let (mut c, mut s) = (0.0, 0.0);
        for i in 0..40 {
            for ch in 0..3 {
                c += (preds[i].color[ch] - targets[i].rgb[ch]).powi(2);
            }
            s += (preds[i].fg_opacity - targets[i].mask).powi(2);
        }
        assert!((l.color - c).abs() < 1e-12 && (l.sigma - s).abs() < 1e-12);
    }

    #[test]
    fn sr_zero_when_upsample_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let low = random_patch(&mut rng, 6, 5);
        let reference = Bicubic::default().upsample(&low);
        let (l, g) = loss_sr(&low, &reference, &Bicubic::default(), &GradientFeatures).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.data.iter().flatten().all(|v| *v == 0.0));
    }

    /// Nearest-neighbour 1x "upsampler" so the identity-extractor case is
    /// plain arithmetic.
    struct Same;
    impl Upsampler for Same {
        fn factor(&self) -> usize {
            1
        }
        fn upsample(&self, low: &Patch) -> Patch {
            low.clone()
        }
        fn backprop(&self, g: &Patch, _: usize, _: usize) -> Patch {
            g.clone()
        }
    }

    #[test]
    fn sr_identity_extractor_hand_computed() {
        let a = Patch { width: 2, height: 2, data: vec![[0.5; 3], [0.2, 0.4, 0.6], [0.0; 3], [1.0; 3]] };
        let mut b = a.clone();
        b.data[1][2] = 0.9; // diff 0.3
        b.data[3][0] = 0.8; // diff 0.2
        let (l, _) = loss_sr(&a, &b, &Same, &IdentityFeatures).unwrap();
        let expected = 0.5 + 0.5 / 12.0;
        assert!((l - expected).abs() < 1e-12, "{l} vs {expected}");
    }

    #[test]
    fn gradient_features_match_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_patch(&mut rng, 7, 5);
        let layers = GradientFeatures.extract(&p);
        assert_eq!(layers.len(), 3);
        assert_eq!(layers[0].neurons(), 7 * 5 * 3);
        // dense correlation with [-1, 1] kernels, valid region
        let kx = [[-1.0, 1.0]];
        let mut i = 0;
        for y in 0..5 {
            for x in 0..6 {
                for c in 0..3 {
                    let v: f64 = (0..2).map(|k| kx[0][k] * p.at(x + k, y)[c]).sum();
                    assert!((v - layers[1].values[i]).abs() < 1e-12);
                    i += 1;
                }
            }
        }
        let mut i = 0;
        for y in 0..4 {
            for x in 0..7 {
                for c in 0..3 {
                    let v = -p.at(x, y)[c] + p.at(x, y + 1)[c];
                    assert!((v - layers[2].values[i]).abs() < 1e-12);
                    i += 1;
                }
            }
        }
    }

    #[test]
    fn linear_operators_have_consistent_transposes() {
        // <A x, y> == <x, A^T y> for the upsampler and the feature extractor
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let up = Bicubic::default();
        let x = random_patch(&mut rng, 5, 4);
        let y = random_patch(&mut rng, 10, 8);
        let ax = up.upsample(&x);
        let aty = up.backprop(&y, 5, 4);
        let dot = |a: &Patch, b: &Patch| a.data.iter().zip(&b.data).map(|(p, q)| p[0] * q[0] + p[1] * q[1] + p[2] * q[2]).sum::<f64>();
        assert!((dot(&ax, &y) - dot(&x, &aty)).abs() < 1e-10);

        let feats = GradientFeatures.extract(&x);
        let gs: Vec<Vec<f64>> = feats.iter().map(|l| (0..l.values.len()).map(|_| rng.random()).collect()).collect();
        let lhs: f64 = feats.iter().zip(&gs).map(|(l, g)| l.values.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()).sum();
        let rhs = dot(&x, &GradientFeatures.backprop(5, 4, &gs));
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn bicubic_reproduces_constants() {
        let p = Patch { width: 4, height: 3, data: vec![[0.25, 0.5, 0.75]; 12] };
        let u = Bicubic::default().upsample(&p);
        assert_eq!((u.width, u.height), (8, 6));
        assert!(u.data.iter().all(|v| (v[0] - 0.25).abs() < 1e-12 && (v[2] - 0.75).abs() < 1e-12));
    }

    #[test]
    fn sr_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let low = random_patch(&mut rng, 4, 4);
        let reference = random_patch(&mut rng, 8, 8);
        let (_, g) = loss_sr(&low, &reference, &Bicubic::default(), &GradientFeatures).unwrap();
        for i in [0usize, 5, 15] {
            for c in 0..3 {
                let mut hi = low.clone();
                let mut lo = low.clone();
                hi.data[i][c] += 1e-6;
                lo.data[i][c] -= 1e-6;
                let fd = (loss_sr(&hi, &reference, &Bicubic::default(), &GradientFeatures).unwrap().0
                    - loss_sr(&lo, &reference, &Bicubic::default(), &GradientFeatures).unwrap().0)
                    / 2e-6;
                assert!((fd - g.data[i][c]).abs() < 1e-5 * fd.abs().max(1.0), "{fd} vs {}", g.data[i][c]);
            }
        }
    }

    #[test]
    fn total_schedule_and_weights() {
        let ones = LossTerms { rec: 1.0, cont: 1.0, sr: 1.0, nv_c: 1.0, nv_sigma: 1.0 };
        let w = LossWeights::default();
        assert!((total_loss(&ones, &w, 0).total - 3.6).abs() < 1e-12);
        let late = LossWeights { nv_start_iteration: 10, ..w };
        let a = total_loss(&ones, &late, 3);
        let b = total_loss(&LossTerms { nv_c: 50.0, nv_sigma: 7.0, ..ones }, &late, 3);
        assert_eq!(a.total, b.total);
        let rec_only = LossWeights { cont: 0.0, nv_color: 0.0, nv_sigma: 0.0, sr: 0.0, nv_start_iteration: 0 };
        assert_eq!(total_loss(&LossTerms { rec: 2.5, ..Default::default() }, &rec_only, 4).total, 2.5);
    }
}
