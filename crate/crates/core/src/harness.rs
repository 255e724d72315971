//! Analytic synthetic scenes: a checkerboard room with one moving object,
//! an exact ray-cast renderer, the dataset writer/loader, and the on-disk
//! pseudo-GT cache built from a Gaussian prior of the object.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    degree_range, dome_viewpoints, look_at_pose, pixel_direction, Aabb, CameraPose, DomeView, GeometryError, Intrinsics, RigidTransform,
    SphericalViewpoint, Vec3,
};
use crate::image_io::{GrayImage, ImageBuffer, ImageError};
use crate::splat::{generate_pseudo_gt, GaussianSet, PseudoView, SurfaceObject};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const IMAGE_SIZE: u32 = 64;
pub const HFOV_DEG: f64 = 90.0;
pub const DOME_RADIUS: f64 = 2.2;
/// Margin between the object's swept volume and the foreground grid.
pub const FG_MARGIN: f64 = 0.15;
/// Margin between the room and the background grid.
pub const BG_MARGIN: f64 = 0.3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown scene {0:?} (expected bouncer or spinner)")]
    UnknownScene(String),
    #[error("scene needs at least 3 frames, got {0}")]
    TooFewFrames(usize),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Bouncer,
    Spinner,
}

impl FromStr for SceneKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bouncer" => Ok(Self::Bouncer),
            "spinner" => Ok(Self::Spinner),
            other => Err(HarnessError::UnknownScene(other.to_string())),
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bouncer => "bouncer",
            Self::Spinner => "spinner",
        })
    }
}

/// Axis-aligned room seen from inside. Faces are ordered
/// `-X, +X, -Y, +Y, -Z, +Z`; each has a two-color checkerboard.
#[derive(Debug, Clone, PartialEq)]
pub struct Room {
    pub bounds: Aabb,
    pub cell: f64,
    pub colors: [[[f64; 3]; 2]; 6],
}

impl Room {
    fn seeded(bounds: Aabb, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let colors = std::array::from_fn(|_| {
            let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.95));
            [base, base.map(|c| c * 0.45)]
        });
        Self { bounds, cell: 1.0, colors }
    }

    /// Exit point albedo for a ray starting inside the room.
    fn albedo_at(&self, p: &Vec3) -> [f64; 3] {
        let (mut best, mut face) = (f64::INFINITY, 0);
        for a in 0..3 {
            for (side, bound) in [self.bounds.min[a], self.bounds.max[a]].into_iter().enumerate() {
                let d = (p[a] - bound).abs();
                if d < best {
                    best = d;
                    face = 2 * a + side;
                }
            }
        }
        let axis = face / 2;
        let (u, v) = (p[(axis + 1) % 3], p[(axis + 2) % 3]);
        let parity = ((u / self.cell).floor() + (v / self.cell).floor()).rem_euclid(2.0) as usize;
        self.colors[face][parity]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    /// Latitude-longitude stripes.
    Sphere { radius: f64 },
    /// One color per face.
    Cube { half: f64 },
}

pub const STRIPE_COLORS: [[f64; 3]; 2] = [[0.95, 0.55, 0.1], [0.1, 0.3, 0.85]];
pub const CUBE_COLORS: [[f64; 3]; 6] = [
    [0.9, 0.15, 0.15],
    [0.15, 0.8, 0.2],
    [0.2, 0.3, 0.9],
    [0.95, 0.85, 0.15],
    [0.85, 0.2, 0.85],
    [0.1, 0.85, 0.85],
];

impl Shape {
    /// Bounding radius around the object origin.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Cube { half } => half * 3f64.sqrt(),
        }
    }

    /// Albedo at a point on the surface, in the object frame.
    pub fn albedo(&self, p: &Vec3) -> [f64; 3] {
        match *self {
            Shape::Sphere { radius } => {
                let q = p / radius;
                let lat = q.y.clamp(-1.0, 1.0).asin();
                let lon = q.x.atan2(q.z);
                let band = (lat / (std::f64::consts::PI / 6.0)).floor() + (lon / (std::f64::consts::PI / 4.0)).floor();
                STRIPE_COLORS[band.rem_euclid(2.0) as usize]
            }
            Shape::Cube { .. } => {
                let a = (0..3).max_by(|&i, &j| p[i].abs().total_cmp(&p[j].abs())).unwrap();
                CUBE_COLORS[2 * a + (p[a] > 0.0) as usize]
            }
        }
    }

    /// Nearest positive hit distance along a ray in the object frame.
    fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        match *self {
            Shape::Sphere { radius } => {
                let b = o.dot(d);
                let c = o.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [-b - s, -b + s].into_iter().find(|t| *t > 0.0)
            }
            Shape::Cube { half } => {
                let (t0, t1) = Aabb::cube([0.0; 3], half).intersect(o, d)?;
                let t = if t0 > 0.0 { t0 } else { t1 };
                (t > 0.0).then_some(t)
            }
        }
    }
}

/// A shape exposed to the prior fitter in its own frame.
#[derive(Debug, Clone, Copy)]
pub struct ObjectSurface(pub Shape);

impl SurfaceObject for ObjectSurface {
    fn surface_area(&self) -> f64 {
        match self.0 {
            Shape::Sphere { radius } => 4.0 * std::f64::consts::PI * radius * radius,
            Shape::Cube { half } => 24.0 * half * half,
        }
    }

    fn diameter(&self) -> f64 {
        2.0 * self.0.bounding_radius()
    }

    fn sample_surface(&self, rng: &mut dyn rand::RngCore) -> Vec3 {
        match self.0 {
            Shape::Sphere { radius } => {
                let z: f64 = rng.random_range(-1.0..1.0);
                let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let r = (1.0 - z * z).sqrt();
                radius * Vec3::new(r * phi.cos(), r * phi.sin(), z)
            }
            Shape::Cube { half } => {
                let face = rng.random_range(0..6usize);
                let (a, sign) = (face / 2, if face % 2 == 1 { 1.0 } else { -1.0 });
                let mut p = Vec3::zeros();
                p[a] = sign * half;
                p[(a + 1) % 3] = rng.random_range(-half..half);
                p[(a + 2) % 3] = rng.random_range(-half..half);
                p
            }
        }
    }

    fn albedo(&self, p: &Vec3) -> [f64; 3] {
        self.0.albedo(p)
    }
}

/// Everything needed to render any frame from any pose.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDef {
    pub kind: SceneKind,
    pub seed: u64,
    pub frames: usize,
    pub room: Room,
    pub shape: Shape,
    /// Object center per frame (index `t - 1`).
    pub centers: Vec<Vec3>,
    /// Object rotation about `+Y` per frame, degrees.
    pub yaw_deg: Vec<f64>,
    pub primary: Vec<CameraPose>,
    pub dome_center: Vec3,
    pub dome_radius: f64,
    pub azimuths: Vec<f64>,
    pub elevations: Vec<f64>,
    pub intrinsics: Intrinsics,
}

/// A ray-cast hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub albedo: [f64; 3],
    pub object: bool,
}

impl SceneDef {
    fn check_frame(&self, t: usize) {
        assert!((1..=self.frames).contains(&t), "frame {t} outside 1..={}", self.frames);
    }

    /// Object frame to world at frame `t`.
    pub fn object_to_world(&self, t: usize) -> RigidTransform {
        self.check_frame(t);
        RigidTransform::translation(self.centers[t - 1]).compose(&RigidTransform::rotation_y(self.yaw_deg[t - 1]))
    }

    pub fn bg_bounds(&self) -> Aabb {
        self.room.bounds.expanded(BG_MARGIN)
    }

    /// Box containing the object at every frame, plus a margin.
    pub fn fg_bounds(&self) -> Aabb {
        let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        let extent = self.object_extent();
        for c in &self.centers {
            for a in 0..3 {
                lo[a] = lo[a].min(c[a] - extent[a]);
                hi[a] = hi[a].max(c[a] + extent[a]);
            }
        }
        Aabb::new(lo, hi).expanded(FG_MARGIN)
    }

    /// Half extents of the object's box under any yaw.
    fn object_extent(&self) -> [f64; 3] {
        match self.shape {
            Shape::Sphere { radius } => [radius; 3],
            Shape::Cube { half } => [half * 2f64.sqrt(), half, half * 2f64.sqrt()],
        }
    }

    /// Azimuth of the primary camera around the dome center, degrees.
    pub fn primary_bearing(&self, t: usize) -> f64 {
        self.check_frame(t);
        SphericalViewpoint::from_offset(&(self.primary[t - 1].eye() - self.dome_center)).azimuth
    }

    /// Dome views at frame `t`; azimuths are relative to the primary bearing.
    pub fn dome_views(&self, t: usize, azimuths: &[f64], elevations: &[f64]) -> Result<Vec<DomeView>, GeometryError> {
        relative_dome(self.dome_center, self.dome_radius, self.primary_bearing(t), azimuths, elevations, self.intrinsics)
    }

    /// Nearest hit of a world-space ray; rays start inside the room.
    pub fn trace(&self, origin: &Vec3, dir: &Vec3, t: usize) -> Hit {
        let to_obj = self.object_to_world(t).inverse();
        let (o, d) = (to_obj.transform_point(origin), to_obj.rotation() * dir);
        if let Some(s) = self.shape.intersect(&o, &d) {
            return Hit { distance: s, albedo: self.shape.albedo(&(o + s * d)), object: true };
        }
        let exit = self.room.bounds.intersect(origin, dir).map(|(_, t1)| t1).unwrap_or(0.0);
        Hit { distance: exit, albedo: self.room.albedo_at(&(origin + exit * dir)), object: false }
    }
}

/// Dome around `center` whose azimuth 0 lies at `bearing`; the returned
/// viewpoints carry the relative azimuths.
pub fn relative_dome(center: Vec3, radius: f64, bearing: f64, azimuths: &[f64], elevations: &[f64], k: Intrinsics) -> Result<Vec<DomeView>, GeometryError> {
    let shifted: Vec<f64> = azimuths.iter().map(|a| a + bearing).collect();
    let mut views = dome_viewpoints(center, radius, &shifted, elevations, k)?;
    let mut sorted = azimuths.to_vec();
    sorted.sort_by(f64::total_cmp);
    for (i, v) in views.iter_mut().enumerate() {
        v.viewpoint.azimuth = sorted[i % sorted.len()];
    }
    Ok(views)
}

/// Exact render at pixel centers with unlit albedo, plus the binary mask of
/// pixels whose nearest hit is the object.
pub fn analytic_render(scene: &SceneDef, pose: &CameraPose, t: usize) -> (ImageBuffer, GrayImage) {
    let k = pose.intrinsics;
    let eye = pose.eye();
    let rows: Vec<Vec<Hit>> = (0..k.height)
        .into_par_iter()
        .map(|y| (0..k.width).map(|x| scene.trace(&eye, &pixel_direction(pose, x as f64 + 0.5, y as f64 + 0.5), t)).collect())
        .collect();
    let mut img = ImageBuffer::new(k.width, k.height);
    let mut mask = GrayImage::new(k.width, k.height);
    for (i, hit) in rows.into_iter().flatten().enumerate() {
        img.data[i] = hit.albedo.map(|c| c as f32);
        mask.data[i] = if hit.object { 1.0 } else { 0.0 };
    }
    (img, mask)
}

/// Default training dome: elevations {0, 15, 30}, azimuths -45..45 step 5.
pub fn default_dome() -> (Vec<f64>, Vec<f64>) {
    (degree_range(-45, 45, 5), vec![0.0, 15.0, 30.0])
}

/// The 12 held-out views: elevation 0, azimuths +-5..+-30.
pub fn eval_azimuths() -> Vec<f64> {
    degree_range(-30, 30, 5).into_iter().filter(|a| *a != 0.0).collect()
}

pub fn gen_scene(name: &str, frames: usize, seed: u64) -> Result<SceneDef, HarnessError> {
    let kind: SceneKind = name.parse()?;
    if frames < 3 {
        return Err(HarnessError::TooFewFrames(frames));
    }
    let room = Room::seeded(Aabb::new([-4.0, -1.0, -4.0], [4.0, 4.0, 4.0]), seed);
    let intrinsics = Intrinsics::from_hfov(IMAGE_SIZE, IMAGE_SIZE, HFOV_DEG);
    let reference = Vec3::new(0.0, 1.0, 0.0);
    let phase = |t: usize| (t - 1) as f64 / frames as f64;
    let (shape, centers, yaw_deg, eyes): (Shape, Vec<Vec3>, Vec<f64>, Vec<Vec3>) = match kind {
        SceneKind::Bouncer => {
            let centers = (1..=frames)
                .map(|t| {
                    let w = std::f64::consts::TAU * phase(t);
                    reference + Vec3::new(0.2 * w.cos(), 0.3 * w.sin(), 0.0)
                })
                .collect();
            let eyes = (1..=frames)
                .map(|t| {
                    let az = -10.0 + 20.0 * (t - 1) as f64 / (frames - 1) as f64;
                    reference + SphericalViewpoint { elevation: 0.0, azimuth: az, radius: DOME_RADIUS }.offset()
                })
                .collect();
            (Shape::Sphere { radius: 0.6 }, centers, vec![0.0; frames], eyes)
        }
        SceneKind::Spinner => {
            let yaw = (1..=frames).map(|t| 360.0 * phase(t)).collect();
            let eyes = (1..=frames)
                .map(|t| {
                    let d = 2.6 - 0.6 * (t - 1) as f64 / (frames - 1) as f64;
                    reference + Vec3::new(0.0, 0.0, d)
                })
                .collect();
            (Shape::Cube { half: 0.45 }, vec![reference; frames], yaw, eyes)
        }
    };
    let primary = eyes.iter().map(|e| look_at_pose(*e, reference, Vec3::y(), intrinsics)).collect::<Result<_, _>>()?;
    let (azimuths, elevations) = default_dome();
    let scene = SceneDef {
        kind,
        seed,
        frames,
        room,
        shape,
        centers,
        yaw_deg,
        primary,
        dome_center: reference,
        dome_radius: DOME_RADIUS,
        azimuths,
        elevations,
        intrinsics,
    };
    let inner = scene.room.bounds;
    let r = scene.shape.bounding_radius();
    for c in &scene.centers {
        assert!((0..3).all(|a| c[a] - r > inner.min[a] && c[a] + r < inner.max[a]), "object leaves the room");
    }
    Ok(scene)
}

/// Dome directory name, e.g. `e15_a-05`.
pub fn dome_dir_name(elevation: f64, azimuth: f64) -> String {
    format!("e{:02}_a{:+03}", elevation.round() as i64, azimuth.round() as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub t: usize,
    /// Row-major 3x3 rotation, translation, then fx fy cx cy width height.
    pub pose: [f64; 18],
    /// Row-major 4x4 object-to-world transform.
    pub object_to_world: [f64; 16],
    pub image: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomeEntry {
    pub t: usize,
    pub elevation: f64,
    /// Relative to the primary bearing at this frame.
    pub azimuth: f64,
    pub pose: [f64; 18],
    pub image: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub scene: SceneKind,
    pub seed: u64,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub bg_bounds: Aabb,
    pub fg_bounds: Aabb,
    pub dome_center: [f64; 3],
    pub dome_radius: f64,
    pub azimuths: Vec<f64>,
    pub elevations: Vec<f64>,
    pub primary: Vec<FrameEntry>,
    pub dome: Vec<DomeEntry>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        let m: Self = serde_json::from_str(s)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(HarnessError::InvalidDataset(format!("unsupported manifest schema {}", m.schema_version)));
        }
        if m.primary.len() != m.frames {
            return Err(HarnessError::InvalidDataset(format!("{} primary entries for {} frames", m.primary.len(), m.frames)));
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&std::fs::read_to_string(dir.join("manifest.json"))?)
    }

    /// Paths of every referenced file, relative to the dataset root.
    pub fn files(&self) -> impl Iterator<Item = &str> {
        self.primary.iter().flat_map(|f| [f.image.as_str(), f.mask.as_str()]).chain(self.dome.iter().flat_map(|d| [d.image.as_str(), d.mask.as_str()]))
    }

    pub fn object_to_world(&self, t: usize) -> RigidTransform {
        RigidTransform(nalgebra::Matrix4::from_row_slice(&self.primary[t - 1].object_to_world))
    }

    /// Pose on the dataset's dome at frame `t`, azimuth relative to the
    /// primary bearing.
    pub fn view_pose(&self, t: usize, elevation: f64, azimuth: f64) -> Result<CameraPose, HarnessError> {
        if !(1..=self.frames).contains(&t) {
            return Err(HarnessError::InvalidDataset(format!("frame {t} outside 1..={}", self.frames)));
        }
        let primary = CameraPose::from_row_major(&self.primary[t - 1].pose)?;
        let center = Vec3::from(self.dome_center);
        let bearing = SphericalViewpoint::from_offset(&(primary.eye() - center)).azimuth;
        Ok(relative_dome(center, self.dome_radius, bearing, &[azimuth], &[elevation], primary.intrinsics)?[0].pose)
    }

    pub fn dome_entry(&self, t: usize, elevation: f64, azimuth: f64) -> Option<&DomeEntry> {
        self.dome.iter().find(|d| d.t == t && (d.elevation - elevation).abs() < 1e-9 && (d.azimuth - azimuth).abs() < 1e-9)
    }
}

fn row_major16(t: &RigidTransform) -> [f64; 16] {
    std::array::from_fn(|i| t.0[(i / 4, i % 4)])
}

/// Writes primary frames, exact masks, dome ground truth for every dome
/// view, and `manifest.json`.
pub fn write_dataset(scene: &SceneDef, out: &Path) -> Result<DatasetManifest, HarnessError> {
    std::fs::create_dir_all(out)?;
    let mut primary = Vec::with_capacity(scene.frames);
    let mut dome = Vec::new();
    for t in 1..=scene.frames {
        let pose = scene.primary[t - 1];
        let (img, mask) = analytic_render(scene, &pose, t);
        let entry = FrameEntry {
            t,
            pose: pose.to_row_major(),
            object_to_world: row_major16(&scene.object_to_world(t)),
            image: format!("frames/{t:04}.png"),
            mask: format!("masks/{t:04}.png"),
        };
        img.save_png(&out.join(&entry.image))?;
        mask.save_png(&out.join(&entry.mask))?;
        primary.push(entry);
        for view in scene.dome_views(t, &scene.azimuths, &scene.elevations)? {
            let dir = dome_dir_name(view.viewpoint.elevation, view.viewpoint.azimuth);
            let (img, mask) = analytic_render(scene, &view.pose, t);
            let entry = DomeEntry {
                t,
                elevation: view.viewpoint.elevation,
                azimuth: view.viewpoint.azimuth,
                pose: view.pose.to_row_major(),
                image: format!("dome/{dir}/{t:04}.png"),
                mask: format!("dome/{dir}/{t:04}_mask.png"),
            };
            img.save_png(&out.join(&entry.image))?;
            mask.save_png(&out.join(&entry.mask))?;
            dome.push(entry);
        }
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        scene: scene.kind,
        seed: scene.seed,
        frames: scene.frames,
        width: scene.intrinsics.width,
        height: scene.intrinsics.height,
        bg_bounds: scene.bg_bounds(),
        fg_bounds: scene.fg_bounds(),
        dome_center: scene.dome_center.into(),
        dome_radius: scene.dome_radius,
        azimuths: scene.azimuths.clone(),
        elevations: scene.elevations.clone(),
        primary,
        dome,
    };
    std::fs::write(out.join("manifest.json"), manifest.to_json()?)?;
    Ok(manifest)
}

/// One decoded primary frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pose: CameraPose,
    pub rgb: ImageBuffer,
    pub mask: GrayImage,
}

/// A dataset loaded from disk; dome ground truth is read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self, HarnessError> {
        let manifest = DatasetManifest::load(root)?;
        let frames = manifest
            .primary
            .iter()
            .map(|f| {
                Ok(Frame {
                    pose: CameraPose::from_row_major(&f.pose)?,
                    rgb: ImageBuffer::load_png(&root.join(&f.image))?,
                    mask: GrayImage::load_png(&root.join(&f.mask))?,
                })
            })
            .collect::<Result<_, HarnessError>>()?;
        Ok(Self { root: root.to_path_buf(), manifest, frames })
    }

    pub fn frame(&self, t: usize) -> &Frame {
        &self.frames[t - 1]
    }

    pub fn dome_gt(&self, t: usize, elevation: f64, azimuth: f64) -> Result<(CameraPose, ImageBuffer, GrayImage), HarnessError> {
        let e = self
            .manifest
            .dome_entry(t, elevation, azimuth)
            .ok_or_else(|| HarnessError::InvalidDataset(format!("no dome view t={t} e={elevation} a={azimuth}")))?;
        Ok((CameraPose::from_row_major(&e.pose)?, ImageBuffer::load_png(&self.root.join(&e.image))?, GrayImage::load_png(&self.root.join(&e.mask))?))
    }
}

/// Pseudo-GT for every frame: `views[t - 1][i]` matches `dome[i]`. Dome
/// poses are in the prior frame; view poses are mapped into the field frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoGtCache {
    pub dome: Vec<DomeView>,
    pub views: Vec<Vec<PseudoView>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PgtManifest {
    schema_version: u32,
    frames: usize,
    radius: f64,
    dome: Vec<(f64, f64)>,
    /// Field-frame poses, `poses[t - 1][i]`.
    poses: Vec<Vec<[f64; 18]>>,
}

impl PseudoGtCache {
    /// Rasterizes the prior (given in the object frame) at every dome view
    /// around the object for every frame. The prior frame is the object frame
    /// turned by the primary bearing, so the dome's azimuth 0 faces the
    /// primary camera.
    pub fn build(prior: &GaussianSet, manifest: &DatasetManifest, azimuths: &[f64], elevations: &[f64]) -> Result<Self, HarnessError> {
        let k = Intrinsics::from_hfov(manifest.width, manifest.height, HFOV_DEG);
        let dome = dome_viewpoints(Vec3::zeros(), manifest.dome_radius, azimuths, elevations, k)?;
        let views = (1..=manifest.frames)
            .map(|t| {
                let p_n = CameraPose::from_row_major(&manifest.primary[t - 1].pose)?;
                let obj = manifest.object_to_world(t);
                let local_eye = obj.inverse().transform_point(&p_n.eye());
                let yaw = RigidTransform::rotation_y(SphericalViewpoint::from_offset(&local_eye).azimuth);
                let prior_to_world = obj.compose(&yaw);
                let p_d = crate::geometry::apply_transform(&prior_to_world.inverse(), &p_n);
                let set = prior.transformed(&yaw.inverse());
                Ok(generate_pseudo_gt(&set, &p_n, &p_d, &dome)
                    .into_iter()
                    .map(|(pose, v)| PseudoView { pose, rgb: v.rgb.quantized(), mask: v.mask.quantized() })
                    .collect())
            })
            .collect::<Result<_, HarnessError>>()?;
        Ok(Self { dome, views })
    }

    pub fn frames(&self) -> usize {
        self.views.len()
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        for (ti, frame) in self.views.iter().enumerate() {
            for (i, v) in frame.iter().enumerate() {
                let base = dir.join(format!("t{:04}", ti + 1));
                v.rgb.save_png(&base.join(format!("v{i:02}_rgb.png")))?;
                v.mask.save_png(&base.join(format!("v{i:02}_mask.png")))?;
            }
        }
        let m = PgtManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            frames: self.frames(),
            radius: self.dome.first().map_or(0.0, |d| d.viewpoint.radius),
            dome: self.dome.iter().map(|d| (d.viewpoint.elevation, d.viewpoint.azimuth)).collect(),
            poses: self.views.iter().map(|f| f.iter().map(|v| v.pose.to_row_major()).collect()).collect(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string(&m)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let m: PgtManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION || m.poses.len() != m.frames {
            return Err(HarnessError::InvalidDataset("malformed pseudo-GT manifest".into()));
        }
        let mut dome = Vec::with_capacity(m.dome.len());
        let views: Vec<Vec<PseudoView>> = m
            .poses
            .iter()
            .enumerate()
            .map(|(ti, poses)| {
                if poses.len() != m.dome.len() {
                    return Err(HarnessError::InvalidDataset(format!("frame {} has {} views", ti + 1, poses.len())));
                }
                let base = dir.join(format!("t{:04}", ti + 1));
                poses
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        Ok(PseudoView {
                            pose: CameraPose::from_row_major(p)?,
                            rgb: ImageBuffer::load_png(&base.join(format!("v{i:02}_rgb.png")))?,
                            mask: GrayImage::load_png(&base.join(format!("v{i:02}_mask.png")))?,
                        })
                    })
                    .collect()
            })
            .collect::<Result<_, HarnessError>>()?;
        if let Some(first) = views.first().and_then(|f| f.first()) {
            for &(elevation, azimuth) in &m.dome {
                dome.extend(dome_viewpoints(Vec3::zeros(), m.radius, &[azimuth], &[elevation], first.pose.intrinsics)?);
            }
        }
        Ok(Self { dome, views })
    }
}
