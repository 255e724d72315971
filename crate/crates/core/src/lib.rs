//! Two-branch explicit radiance field for dynamic monocular scenes,
//! supervised at unseen large-angle viewpoints by pseudo ground truth
//! rasterized from an object-centric Gaussian prior.
//!
//! Module map:
//! - [`geometry`]: camera poses, rays, dome viewpoints, rigid alignment
//! - [`field`]: background grid plus per-frame foreground grids
//! - [`render`]: volume rendering and its analytic gradients
//! - [`splat`]: Gaussian prior fitting and rasterization (pseudo-GT source)
//! - [`sampling`]: pixel sampling strategies for novel-view supervision
//! - [`losses`]: training objectives and the total-loss schedule
//! - [`trainer`]: optimization loop, checkpoints, configuration
//! - [`harness`]: analytic synthetic scenes and dataset writer
//! - [`metrics`]: PSNR, SSIM, error heatmaps, held-out evaluation

pub mod field;
pub mod geometry;
pub mod harness;
pub mod image_io;
pub mod losses;
pub mod metrics;
pub mod render;
pub mod sampling;
pub mod splat;
pub mod trainer;
