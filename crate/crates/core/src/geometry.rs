//! Camera poses, rays, dome viewpoint sampling and rigid alignment.
//!
//! Poses are world-from-camera with column-vector points. The camera looks
//! down its local `+Z` axis, `+X` points right in the image and `+Y` points
//! down, so pixel `(px, py)` back-projects through
//! `((px + 0.5 - cx) / fx, (py + 0.5 - cy) / fy, 1)`.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

const DEGENERATE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate look-at: up vector is parallel to the viewing direction")]
    DegenerateLookAt,
    #[error("eye and target coincide")]
    CoincidentEyeTarget,
    #[error("ray does not intersect the scene bounds")]
    RayMissesBounds,
    #[error("dome has no symmetric azimuth pair")]
    EmptyDome,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("pixel ({0}, {1}) outside the raster")]
    PixelOutOfRange(u32, u32),
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Square-pixel intrinsics from a horizontal field of view, principal
    /// point at the raster center.
    pub fn from_hfov(width: u32, height: u32, hfov_deg: f64) -> Self {
        let fx = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self {
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }

    /// Intrinsics for the same frustum sampled at `1/factor` resolution.
    pub fn downscaled(&self, factor: u32) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera("focal length must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidCamera("principal point outside the raster".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Rigid world-from-camera transform plus pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub intrinsics: Intrinsics,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3, intrinsics: Intrinsics) -> Result<Self, GeometryError> {
        check_rotation(&rotation)?;
        intrinsics.validate()?;
        Ok(Self { rotation, translation, intrinsics })
    }

    pub fn eye(&self) -> Vec3 {
        self.translation
    }

    pub fn right(&self) -> Vec3 {
        self.rotation.column(0).into_owned()
    }

    pub fn down(&self) -> Vec3 {
        self.rotation.column(1).into_owned()
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Builds a pose from the upper 3x4 block of `m`, re-orthonormalizing the
    /// rotation to absorb round-off.
    pub fn from_matrix(m: &Matrix4<f64>, intrinsics: Intrinsics) -> Self {
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self { rotation, translation, intrinsics }
    }

    /// Camera-frame coordinates of a world point.
    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Same pose with different intrinsics.
    pub fn with_intrinsics(&self, intrinsics: Intrinsics) -> Self {
        Self { intrinsics, ..*self }
    }

    /// Row-major 3x4 `[R | t]` followed by `fx, fy, cx, cy, width, height`.
    pub fn to_row_major(&self) -> [f64; 18] {
        let mut out = [0.0; 18];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        let k = &self.intrinsics;
        out[12..].copy_from_slice(&[k.fx, k.fy, k.cx, k.cy, k.width as f64, k.height as f64]);
        out
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self, GeometryError> {
        if v.len() != 18 {
            return Err(GeometryError::InvalidCamera(format!("expected 18 numbers, got {}", v.len())));
        }
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vec3::new(v[3], v[7], v[11]);
        let intrinsics = Intrinsics {
            fx: v[12],
            fy: v[13],
            cx: v[14],
            cy: v[15],
            width: v[16] as u32,
            height: v[17] as u32,
        };
        Self::new(rotation, translation, intrinsics)
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<(), GeometryError> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
        return Err(GeometryError::InvalidCamera("rotation is not orthonormal with det +1".into()));
    }
    Ok(())
}

/// Position on a dome in degrees and scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalViewpoint {
    pub elevation: f64,
    pub azimuth: f64,
    pub radius: f64,
}

impl SphericalViewpoint {
    pub fn new(elevation: f64, azimuth: f64, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0) || !(-90.0..=90.0).contains(&elevation) || !(-180.0..=180.0).contains(&azimuth) {
            return Err(GeometryError::InvalidCamera(format!(
                "viewpoint out of range: elevation {elevation}, azimuth {azimuth}, radius {radius}"
            )));
        }
        Ok(Self { elevation, azimuth, radius })
    }

    /// Offset from the dome center. Azimuth 0 lies on `+Z`, positive azimuth
    /// turns toward `+X`, elevation rises toward `+Y`.
    pub fn offset(&self) -> Vec3 {
        let (e, a) = (self.elevation.to_radians(), self.azimuth.to_radians());
        self.radius * Vec3::new(e.cos() * a.sin(), e.sin(), e.cos() * a.cos())
    }

    /// Inverse of [`SphericalViewpoint::offset`].
    pub fn from_offset(d: &Vec3) -> Self {
        let radius = d.norm();
        let elevation = (d.y / radius).clamp(-1.0, 1.0).asin().to_degrees();
        let azimuth = d.x.atan2(d.z).to_degrees();
        Self { elevation, azimuth, radius }
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn cube(center: [f64; 3], half: f64) -> Self {
        Self {
            min: [center[0] - half, center[1] - half, center[2] - half],
            max: [center[0] + half, center[1] + half, center[2] + half],
        }
    }

    pub fn expanded(&self, margin: f64) -> Self {
        Self {
            min: self.min.map(|v| v - margin),
            max: self.max.map(|v| v + margin),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn extent(&self) -> [f64; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    /// Slab intersection clipped to `t >= 0`. `None` when the ray misses or
    /// the interval is empty.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0_f64;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-15 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (mut a, mut b) = ((self.min[i] - origin[i]) * inv, (self.max[i] - origin[i]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        (t0 < t1).then_some((t0, t1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
    pub frame_time: usize,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Re-clips the ray against `bounds`, keeping origin and direction.
    pub fn clipped_to(&self, bounds: &Aabb) -> Option<Ray> {
        let (t0, t1) = bounds.intersect(&self.origin, &self.direction)?;
        Some(Ray { t_near: t0, t_far: t1, ..*self })
    }
}

/// 4x4 homogeneous rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform(pub Matrix4<f64>);

impl RigidTransform {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self(m)
    }

    pub fn translation(v: Vec3) -> Self {
        Self::from_parts(Matrix3::identity(), v)
    }

    pub fn rotation_y(angle_deg: f64) -> Self {
        let r = Rotation3::from_axis_angle(&Vector3::y_axis(), angle_deg.to_radians());
        Self::from_parts(*r.matrix(), Vec3::zeros())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation_part(&self) -> Vec3 {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Closed-form rigid inverse.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        Self::from_parts(rt, -(rt * self.translation_part()))
    }

    /// `self * other`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self(self.0 * other.0)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation_part()
    }

    pub fn is_rigid(&self) -> bool {
        let bottom_ok = (self.0[(3, 0)], self.0[(3, 1)], self.0[(3, 2)], self.0[(3, 3)]) == (0.0, 0.0, 0.0, 1.0);
        bottom_ok && check_rotation(&self.rotation()).is_ok()
    }
}

impl From<&CameraPose> for RigidTransform {
    fn from(p: &CameraPose) -> Self {
        RigidTransform(p.to_matrix())
    }
}

pub fn look_at_pose(eye: Vec3, target: Vec3, up: Vec3, intrinsics: Intrinsics) -> Result<CameraPose, GeometryError> {
    let to_target = target - eye;
    if to_target.norm() <= DEGENERATE_EPS {
        return Err(GeometryError::CoincidentEyeTarget);
    }
    let forward = to_target.normalize();
    let up_norm = up.norm();
    if up_norm <= DEGENERATE_EPS {
        return Err(GeometryError::DegenerateLookAt);
    }
    let side = forward.cross(&(up / up_norm));
    if side.norm() < DEGENERATE_EPS {
        return Err(GeometryError::DegenerateLookAt);
    }
    let right = side.normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_columns(&[right, down, forward]);
    CameraPose::new(rotation, eye, intrinsics)
}

/// One pose on the dome together with its spherical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomeView {
    pub viewpoint: SphericalViewpoint,
    pub pose: CameraPose,
}

/// Poses on a sphere cap around `center`, all aimed at the center with `+Y`
/// up. Ordered elevation-major, azimuth ascending within each elevation.
pub fn dome_viewpoints(
    center: Vec3,
    radius: f64,
    azimuths: &[f64],
    elevations: &[f64],
    intrinsics: Intrinsics,
) -> Result<Vec<DomeView>, GeometryError> {
    if !(radius > 0.0) || azimuths.is_empty() || elevations.is_empty() {
        return Err(GeometryError::EmptyDome);
    }
    let mut az = azimuths.to_vec();
    az.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(az.len() * elevations.len());
    for &e in elevations {
        for &a in &az {
            let viewpoint = SphericalViewpoint::new(e, a, radius)?;
            let pose = look_at_pose(center + viewpoint.offset(), center, Vec3::y(), intrinsics)?;
            out.push(DomeView { viewpoint, pose });
        }
    }
    Ok(out)
}

/// Integer-degree range `start..=end` stepping by `step`.
pub fn degree_range(start: i32, end: i32, step: i32) -> Vec<f64> {
    (start..=end).step_by(step as usize).map(f64::from).collect()
}

/// `T = P_n * P_d^-1`: maps the prior frame onto the field frame.
pub fn alignment_transform(p_n: &CameraPose, p_d: &CameraPose) -> RigidTransform {
    RigidTransform::from(p_n).compose(&RigidTransform::from(p_d).inverse())
}

/// Rigid composition `T * P`; intrinsics are carried over.
pub fn apply_transform(t: &RigidTransform, p: &CameraPose) -> CameraPose {
    let m = t.0 * p.to_matrix();
    CameraPose::from_matrix(&m, p.intrinsics)
}

/// Ray through the center of pixel `(px, py)`, clipped to `bounds`.
pub fn generate_ray(pose: &CameraPose, px: u32, py: u32, frame_time: usize, bounds: &Aabb) -> Result<Ray, GeometryError> {
    let k = &pose.intrinsics;
    if px >= k.width || py >= k.height {
        return Err(GeometryError::PixelOutOfRange(px, py));
    }
    let direction = pixel_direction(pose, px as f64 + 0.5, py as f64 + 0.5);
    let origin = pose.eye();
    let (t_near, t_far) = bounds.intersect(&origin, &direction).ok_or(GeometryError::RayMissesBounds)?;
    Ok(Ray { origin, direction, t_near, t_far, frame_time })
}

/// World-space unit direction through continuous pixel coordinates `(u, v)`.
pub fn pixel_direction(pose: &CameraPose, u: f64, v: f64) -> Vec3 {
    let k = &pose.intrinsics;
    let d_cam = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    (pose.rotation * d_cam).normalize()
}

/// Indices of a `(+a, -a)` pair within a dome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymmetricPair {
    pub positive: usize,
    pub negative: usize,
}

/// Draws an elevation uniformly, then a nonzero `|a|` uniformly among the
/// azimuths mirrored at that elevation.
pub fn symmetric_pair<R: Rng + ?Sized>(rng: &mut R, dome: &[DomeView]) -> Result<SymmetricPair, GeometryError> {
    let groups = symmetric_groups(dome);
    if groups.is_empty() {
        return Err(GeometryError::EmptyDome);
    }
    let pairs = &groups[rng.random_range(0..groups.len())];
    Ok(pairs[rng.random_range(0..pairs.len())])
}

/// Eligible symmetric pairs grouped by elevation, in dome order.
pub fn symmetric_groups(dome: &[DomeView]) -> Vec<Vec<SymmetricPair>> {
    let mut elevations: Vec<f64> = Vec::new();
    for v in dome {
        if !elevations.iter().any(|e| (*e - v.viewpoint.elevation).abs() < 1e-9) {
            elevations.push(v.viewpoint.elevation);
        }
    }
    let mut groups = Vec::new();
    for e in elevations {
        let at_e: Vec<usize> = (0..dome.len())
            .filter(|&i| (dome[i].viewpoint.elevation - e).abs() < 1e-9)
            .collect();
        let mut pairs = Vec::new();
        for &i in &at_e {
            let a = dome[i].viewpoint.azimuth;
            if a <= 0.0 {
                continue;
            }
            if let Some(&j) = at_e.iter().find(|&&j| (dome[j].viewpoint.azimuth + a).abs() < 1e-9) {
                pairs.push(SymmetricPair { positive: i, negative: j });
            }
        }
        if !pairs.is_empty() {
            groups.push(pairs);
        }
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k64() -> Intrinsics {
        Intrinsics::from_hfov(64, 64, 90.0)
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
        let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let angle = rng.random_range(-3.0..3.0);
        let r = Rotation3::from_scaled_axis(axis.normalize() * angle);
        let t = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        CameraPose::new(*r.matrix(), t, k64()).unwrap()
    }

    #[test]
    fn look_at_axis_aligned() {
        let p = look_at_pose(Vec3::new(0.0, 0.0, 5.0), Vec3::zeros(), Vec3::y(), k64()).unwrap();
        assert!((p.forward() - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        let p = look_at_pose(Vec3::new(5.0, 0.0, 0.0), Vec3::zeros(), Vec3::y(), k64()).unwrap();
        assert!((p.forward() - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((p.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn look_at_parallel_up_fails() {
        let eye = Vec3::new(3.0, 4.0, 0.0);
        let err = look_at_pose(eye, Vec3::zeros(), eye, k64()).unwrap_err();
        assert_eq!(err, GeometryError::DegenerateLookAt);
    }

    #[test]
    fn dome_grid_count_and_aim() {
        let center = Vec3::new(0.3, 1.0, -0.2);
        let dome = dome_viewpoints(center, 2.5, &degree_range(-45, 45, 5), &[0.0, 15.0, 30.0], k64()).unwrap();
        assert_eq!(dome.len(), 57);
        for v in &dome {
            assert!(((v.pose.eye() - center).norm() - 2.5).abs() < 1e-9);
            let to_center = (center - v.pose.eye()).normalize();
            assert!((v.pose.forward().dot(&to_center) - 1.0).abs() < 1e-9);
        }
        // elevation-major, azimuth ascending
        assert_eq!(dome[0].viewpoint.elevation, 0.0);
        assert_eq!(dome[0].viewpoint.azimuth, -45.0);
        assert_eq!(dome[19].viewpoint.elevation, 15.0);
        assert_eq!(dome[56].viewpoint.azimuth, 45.0);
    }

    #[test]
    fn dome_primary_viewpoint() {
        let e = 12.0;
        let dome = dome_viewpoints(Vec3::zeros(), 3.0, &[0.0], &[e], k64()).unwrap();
        assert_eq!(dome.len(), 1);
        let er = f64::to_radians(e);
        let expected = Vec3::new(0.0, 3.0 * er.sin(), 3.0 * er.cos());
        assert!((dome[0].pose.eye() - expected).norm() < 1e-12);
    }

    #[test]
    fn alignment_identity_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_pose(&mut rng);
        let t = alignment_transform(&p, &p);
        assert!((t.0 - Matrix4::identity()).abs().max() < 1e-12);
        for _ in 0..50 {
            let (p_n, p_d) = (random_pose(&mut rng), random_pose(&mut rng));
            let t = alignment_transform(&p_n, &p_d);
            assert!(t.is_rigid());
            let mapped = apply_transform(&t, &p_d);
            // independent oracle: explicit triple loop over 4x4 entries
            let a = t.0;
            let b = p_d.to_matrix();
            let mut prod = [[0.0f64; 4]; 4];
            for (i, row) in prod.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    for k in 0..4 {
                        *v += a[(i, k)] * b[(k, j)];
                    }
                }
            }
            let target = p_n.to_matrix();
            let mm = mapped.to_matrix();
            for i in 0..4 {
                for j in 0..4 {
                    assert!((prod[i][j] - target[(i, j)]).abs() < 1e-10);
                    assert!((mm[(i, j)] - target[(i, j)]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn apply_transform_identity_translation_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_pose(&mut rng);
        assert_eq!(apply_transform(&RigidTransform::identity(), &p), p);
        let v = Vec3::new(1.0, -2.0, 0.5);
        let q = apply_transform(&RigidTransform::translation(v), &p);
        assert!((q.eye() - (p.eye() + v)).norm() < 1e-12);
        assert_eq!(q.rotation, p.rotation);
        assert_eq!(q.intrinsics, p.intrinsics);

        let t1 = RigidTransform::from(&random_pose(&mut rng));
        let t2 = RigidTransform::from(&random_pose(&mut rng));
        let lhs = apply_transform(&t2, &apply_transform(&t1, &p)).to_matrix();
        let rhs = apply_transform(&t2.compose(&t1), &p).to_matrix();
        assert!((lhs - rhs).abs().max() < 1e-10);
    }

    #[test]
    fn ray_through_principal_point_is_forward() {
        let k = Intrinsics { fx: 30.0, fy: 30.0, cx: 10.5, cy: 7.5, width: 21, height: 15 };
        let p = look_at_pose(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), Vec3::y(), k).unwrap();
        let big = Aabb::cube([0.0; 3], 100.0);
        let r = generate_ray(&p, 10, 7, 1, &big).unwrap();
        assert!((r.direction - p.forward()).norm() < 1e-12);
        assert!((r.direction.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pixels_mirror_about_forward() {
        let p = look_at_pose(Vec3::new(0.0, 0.0, 5.0), Vec3::zeros(), Vec3::y(), k64()).unwrap();
        let big = Aabb::cube([0.0; 3], 100.0);
        for k in 1..20u32 {
            let a = generate_ray(&p, 32 - k, 32, 0, &big).unwrap().direction;
            // pixel centers: (32 - k) + 0.5 and (31 + k) + 0.5 are symmetric about cx = 32
            let b = generate_ray(&p, 31 + k, 32, 0, &big).unwrap().direction;
            let f = p.forward();
            assert!((a.dot(&f) - b.dot(&f)).abs() < 1e-12);
            assert!((a.dot(&p.right()) + b.dot(&p.right())).abs() < 1e-12);
        }
    }

    #[test]
    fn ray_box_interval_matches_analytic() {
        // Odd raster so the central pixel center sits on the principal point.
        let k = Intrinsics { fx: 20.0, fy: 20.0, cx: 16.5, cy: 16.5, width: 33, height: 33 };
        let p = look_at_pose(Vec3::new(0.0, 0.0, 5.0), Vec3::zeros(), Vec3::y(), k).unwrap();
        let r = generate_ray(&p, 16, 16, 0, &Aabb::cube([0.0; 3], 0.5)).unwrap();
        assert!((r.t_near - 4.5).abs() < 1e-12);
        assert!((r.t_far - 5.5).abs() < 1e-12);
        let miss = generate_ray(&p, 0, 0, 0, &Aabb::cube([0.0; 3], 0.5));
        assert_eq!(miss.unwrap_err(), GeometryError::RayMissesBounds);
    }

    #[test]
    fn half_turn_about_up_negates_forward() {
        let p = look_at_pose(Vec3::new(1.0, 0.5, 4.0), Vec3::zeros(), Vec3::y(), k64()).unwrap();
        let up = -p.down();
        let flip = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(up), std::f64::consts::PI);
        let flipped = flip.matrix() * p.rotation;
        let f2: Vec3 = flipped.column(2).into_owned();
        assert!((f2 + p.forward()).norm() < 1e-12);
    }

    #[test]
    fn symmetric_pair_single_option() {
        let dome = dome_viewpoints(Vec3::zeros(), 2.0, &[-5.0, 5.0], &[0.0], k64()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let pair = symmetric_pair(&mut rng, &dome).unwrap();
            assert_eq!(dome[pair.positive].viewpoint.azimuth, 5.0);
            assert_eq!(dome[pair.negative].viewpoint.azimuth, -5.0);
        }
        let lonely = dome_viewpoints(Vec3::zeros(), 2.0, &[0.0, 5.0], &[0.0], k64()).unwrap();
        assert_eq!(symmetric_pair(&mut rng, &lonely).unwrap_err(), GeometryError::EmptyDome);
    }

    #[test]
    fn symmetric_pair_deterministic() {
        let dome = dome_viewpoints(Vec3::zeros(), 2.0, &degree_range(-45, 45, 5), &[0.0, 15.0, 30.0], k64()).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100).map(|_| symmetric_pair(&mut rng, &dome).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn symmetric_pair_uniform_over_magnitudes() {
        let dome = dome_viewpoints(Vec3::zeros(), 2.0, &degree_range(-45, 45, 5), &[0.0, 15.0, 30.0], k64()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 10_000;
        let mut counts = [0usize; 9];
        let mut elev = [0usize; 3];
        for _ in 0..draws {
            let pair = symmetric_pair(&mut rng, &dome).unwrap();
            let a = dome[pair.positive].viewpoint;
            assert_eq!(a.azimuth, -dome[pair.negative].viewpoint.azimuth);
            assert_eq!(a.elevation, dome[pair.negative].viewpoint.elevation);
            counts[(a.azimuth / 5.0) as usize - 1] += 1;
            elev[(a.elevation / 15.0) as usize] += 1;
        }
        let p = 1.0 / 9.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
        // chi-square with 8 dof; 0.999 quantile is 26.1
        let expected = draws as f64 * p;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 26.1, "chi2 {chi2}");
        assert!(elev.iter().all(|&c| c > 3000));
    }

    #[test]
    fn pose_row_major_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_pose(&mut rng);
        let q = CameraPose::from_row_major(&p.to_row_major()).unwrap();
        assert_eq!(p, q);
    }
}
