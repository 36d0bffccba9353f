//! Pinhole camera model, rigid poses and rays.
//!
//! World units are millimetres. Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`
//! so its centre sits at `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Number of compositions after which a pose rotation is re-orthonormalized.
pub const REORTHONORMALIZE_EVERY: u32 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive camera depth {0}")]
    DepthNonPositive(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
}

/// Pinhole intrinsics with optional radial distortion (zero by default).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_length_px: f64,
    pub principal_point: [f64; 2],
    pub image_size: [u32; 2],
    #[serde(default)]
    pub skew: f64,
    /// Radial coefficients `k1, k2` applied to normalized coordinates.
    #[serde(default)]
    pub distortion: [f64; 2],
}

impl CameraIntrinsics {
    pub fn new(
        focal_length_px: f64,
        principal_point: [f64; 2],
        image_size: [u32; 2],
    ) -> Result<Self, GeometryError> {
        let intrinsics = Self {
            focal_length_px,
            principal_point,
            image_size,
            skew: 0.0,
            distortion: [0.0; 2],
        };
        intrinsics.validate()?;
        Ok(intrinsics)
    }

    /// Intrinsics with the principal point at the image centre.
    pub fn centred(focal_length_px: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(
            focal_length_px,
            [width as f64 / 2.0, height as f64 / 2.0],
            [width, height],
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let [w, h] = self.image_size;
        if !(self.focal_length_px.is_finite() && self.focal_length_px > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal length {} must be positive",
                self.focal_length_px
            )));
        }
        if w < 1 || h < 1 {
            return Err(GeometryError::InvalidIntrinsics("empty image size".into()));
        }
        let [cx, cy] = self.principal_point;
        if !(cx >= 0.0 && cx < w as f64 && cy >= 0.0 && cy < h as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {w}x{h}"
            )));
        }
        if !self.skew.is_finite() || self.distortion.iter().any(|k| !k.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.image_size[0]
    }

    pub fn height(&self) -> u32 {
        self.image_size[1]
    }

    /// True when `px` lies on the sensor.
    pub fn contains(&self, px: [f64; 2]) -> bool {
        px[0] >= 0.0
            && px[1] >= 0.0
            && px[0] < self.image_size[0] as f64
            && px[1] < self.image_size[1] as f64
    }

    /// Same camera resampled by `factor` (e.g. 0.5 halves the resolution).
    pub fn scaled(&self, factor: f64) -> Self {
        let w = ((self.image_size[0] as f64 * factor).round() as u32).max(1);
        let h = ((self.image_size[1] as f64 * factor).round() as u32).max(1);
        Self {
            focal_length_px: self.focal_length_px * factor,
            principal_point: [
                self.principal_point[0] * factor,
                self.principal_point[1] * factor,
            ],
            image_size: [w, h],
            skew: self.skew * factor,
            distortion: self.distortion,
        }
    }

    fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let [k1, k2] = self.distortion;
        if k1 == 0.0 && k2 == 0.0 {
            return (x, y);
        }
        let r2 = x * x + y * y;
        let s = 1.0 + k1 * r2 + k2 * r2 * r2;
        (x * s, y * s)
    }

    fn undistort(&self, xd: f64, yd: f64) -> (f64, f64) {
        let [k1, k2] = self.distortion;
        if k1 == 0.0 && k2 == 0.0 {
            return (xd, yd);
        }
        // Fixed-point iteration; converges for the mild distortion of macro lenses.
        let (mut x, mut y) = (xd, yd);
        for _ in 0..100 {
            let r2 = x * x + y * y;
            let s = 1.0 + k1 * r2 + k2 * r2 * r2;
            let (nx, ny) = (xd / s, yd / s);
            let delta = (nx - x).abs() + (ny - y).abs();
            x = nx;
            y = ny;
            if delta < 1e-16 {
                break;
            }
        }
        (x, y)
    }

    /// Pixel coordinates of a camera-frame point (no depth check).
    pub fn project_camera(&self, pc: &Vec3) -> [f64; 2] {
        let (x, y) = self.distort(pc.x / pc.z, pc.y / pc.z);
        [
            self.focal_length_px * x + self.skew * y + self.principal_point[0],
            self.focal_length_px * y + self.principal_point[1],
        ]
    }

    /// Unit camera-frame direction through a pixel position.
    pub fn pixel_direction(&self, px: [f64; 2]) -> Vec3 {
        let yd = (px[1] - self.principal_point[1]) / self.focal_length_px;
        let xd = (px[0] - self.principal_point[0] - self.skew * yd) / self.focal_length_px;
        let (x, y) = self.undistort(xd, yd);
        Vec3::new(x, y, 1.0).normalize()
    }
}

/// Rigid world-to-camera transform: `x_cam = rotation * x_world + translation`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
    #[serde(skip)]
    compositions: u32,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let pose = Self {
            rotation,
            translation,
            compositions: 0,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Builds a pose without validation; callers guarantee orthonormality.
    pub fn from_parts(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
            compositions: 0,
        }
    }

    pub fn identity() -> Self {
        Self::from_parts(Mat3::identity(), Vec3::zeros())
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let r = &self.rotation;
        if r.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite entry".into()));
        }
        let ortho_err = (r.transpose() * r - Mat3::identity()).abs().max();
        if ortho_err > 1e-9 {
            return Err(GeometryError::InvalidPose(format!(
                "rotation not orthonormal (error {ortho_err:e})"
            )));
        }
        if (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidPose("rotation determinant is not +1".into()));
        }
        Ok(())
    }

    /// Camera looking from `eye` towards `target`; image `y` points along
    /// the projection of `-up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self, GeometryError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(GeometryError::InvalidPose("eye coincides with target".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-12 {
            return Err(GeometryError::InvalidPose("up parallel to view direction".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Ok(Self::from_parts(rotation, translation))
    }

    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self::from_parts(rotation_from_axis_angle(&axis_angle), translation)
    }

    /// Camera centre in world coordinates, `-R^T t`.
    pub fn camera_centre(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn to_world(&self, pc: &Vec3) -> Vec3 {
        self.rotation.transpose() * (pc - self.translation)
    }

    /// Unit optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
            compositions: self.compositions,
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    ///
    /// Rotations are re-orthonormalized by polar decomposition every
    /// [`REORTHONORMALIZE_EVERY`] compositions.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut rotation = self.rotation * other.rotation;
        let mut compositions = self.compositions.max(other.compositions) + 1;
        if compositions >= REORTHONORMALIZE_EVERY {
            rotation = nearest_rotation(&rotation);
            compositions = 0;
        }
        Pose {
            rotation,
            translation: self.rotation * other.translation + self.translation,
            compositions,
        }
    }

    /// Angle in degrees of the relative rotation between two poses.
    pub fn rotation_error_deg(&self, other: &Pose) -> f64 {
        rotation_angle(&(self.rotation * other.rotation.transpose())).to_degrees()
    }
}

impl PartialEq for Pose {
    fn eq(&self, other: &Self) -> bool {
        self.rotation == other.rotation && self.translation == other.translation
    }
}

/// Closest rotation matrix in the Frobenius sense (polar decomposition).
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

pub fn rotation_from_axis_angle(w: &Vec3) -> Mat3 {
    let angle = w.norm();
    if angle < 1e-300 {
        return Mat3::identity();
    }
    Rotation3::from_axis_angle(&Unit::new_normalize(*w), angle).into_inner()
}

pub fn axis_angle_from_rotation(r: &Mat3) -> Vec3 {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Rotation angle in radians of `r`.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    // acos is ill-conditioned near zero; use the skew part there.
    let s = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    s.atan2(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Ray with the direction normalized.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Perpendicular distance from `p` to the infinite line of the ray.
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let d = p - self.origin;
        (d - self.direction * d.dot(&self.direction)).norm()
    }
}

/// Projects a world point to pixel coordinates.
///
/// The result may fall outside the image; callers clip.
pub fn project_point(
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
    p: &Vec3,
) -> Result<[f64; 2], GeometryError> {
    let pc = pose.to_camera(p);
    if pc.z <= 0.0 {
        return Err(GeometryError::DepthNonPositive(pc.z));
    }
    Ok(intrinsics.project_camera(&pc))
}

/// World-space ray from the camera centre through pixel position `px`.
pub fn backproject_pixel(intrinsics: &CameraIntrinsics, pose: &Pose, px: [f64; 2]) -> Ray {
    let dir_cam = intrinsics.pixel_direction(px);
    Ray {
        origin: pose.camera_centre(),
        direction: (pose.rotation.transpose() * dir_cam).normalize(),
    }
}

/// Camera pose on a turntable orbit: the specimen pivot at `target`, the
/// camera at azimuth `pan_deg` and elevation `tilt_deg` at `distance` mm.
pub fn orbit_pose(target: Vec3, distance: f64, pan_deg: f64, tilt_deg: f64) -> Pose {
    let (pan, tilt) = (pan_deg.to_radians(), tilt_deg.to_radians());
    let dir = Vec3::new(tilt.cos() * pan.cos(), tilt.cos() * pan.sin(), tilt.sin());
    let eye = target + dir * distance;
    // Straight down or up views need a different up hint.
    let up = if tilt.cos().abs() < 1e-9 {
        Vec3::new(-pan.cos(), -pan.sin(), 0.0)
    } else {
        Vec3::z()
    };
    Pose::look_at(eye, target, up).expect("orbit pose is well defined")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simple() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, [50.0, 50.0], [100, 100]).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let w = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let t = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        Pose::from_axis_angle(w, t)
    }

    #[test]
    fn optical_axis_point_hits_principal_point() {
        let px = project_point(&simple(), &Pose::identity(), &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, [50.0, 50.0]);
    }

    #[test]
    fn off_axis_point() {
        let px = project_point(&simple(), &Pose::identity(), &Vec3::new(0.1, 0.0, 1.0)).unwrap();
        assert_relative_eq!(px[0], 60.0, epsilon = 1e-12);
        assert_relative_eq!(px[1], 50.0, epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let err = project_point(&simple(), &Pose::identity(), &Vec3::new(0.0, 0.0, -1.0));
        assert!(matches!(err, Err(GeometryError::DepthNonPositive(_))));
        let err = project_point(&simple(), &Pose::identity(), &Vec3::new(1.0, 0.0, 0.0));
        assert!(matches!(err, Err(GeometryError::DepthNonPositive(_))));
    }

    #[test]
    fn principal_ray_is_plus_z() {
        let ray = backproject_pixel(&simple(), &Pose::identity(), [50.0, 50.0]);
        assert_eq!(ray.origin, Vec3::zeros());
        assert_relative_eq!(ray.direction, Vec3::z(), epsilon = 1e-15);
    }

    #[test]
    fn corner_ray_signs() {
        let ray = backproject_pixel(&simple(), &Pose::identity(), [0.0, 0.0]);
        assert!(ray.direction.x < 0.0 && ray.direction.y < 0.0 && ray.direction.z > 0.0);
        let ray = backproject_pixel(&simple(), &Pose::identity(), [100.0, 0.0]);
        assert!(ray.direction.x > 0.0 && ray.direction.y < 0.0);
    }

    #[test]
    fn random_point_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let intr = CameraIntrinsics::new(800.0, [320.0, 240.0], [640, 480]).unwrap();
        for _ in 0..200 {
            let pose = random_pose(&mut rng);
            let pc = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.5..50.0));
            let p = pose.to_world(&pc);
            let px = project_point(&intr, &pose, &p).unwrap();
            let ray = backproject_pixel(&intr, &pose, px);
            assert!(ray.distance_to(&p) <= 1e-6, "{}", ray.distance_to(&p));
        }
    }

    #[test]
    fn random_pixel_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut intr = CameraIntrinsics::new(1200.0, [400.0, 300.0], [800, 600]).unwrap();
        intr.skew = 0.5;
        for distortion in [[0.0, 0.0], [-0.05, 0.01]] {
            intr.distortion = distortion;
            for _ in 0..1000 {
                let pose = random_pose(&mut rng);
                let px = [rng.gen_range(0.0..800.0), rng.gen_range(0.0..600.0)];
                let ray = backproject_pixel(&intr, &pose, px);
                let depth = rng.gen_range(0.1..1000.0);
                let back = project_point(&intr, &pose, &ray.at(depth)).unwrap();
                let err = ((back[0] - px[0]).powi(2) + (back[1] - px[1]).powi(2)).sqrt();
                assert!(err <= 1e-6, "reprojection error {err}");
            }
        }
    }

    #[test]
    fn composition_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            assert!((left.rotation - right.rotation).abs().max() <= 1e-12);
            assert!((left.translation - right.translation).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn long_composition_chain_stays_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pose = Pose::identity();
        for _ in 0..1000 {
            pose = pose.compose(&random_pose(&mut rng));
        }
        pose.validate().unwrap();
        let err = (pose.rotation.transpose() * pose.rotation - Mat3::identity()).abs().max();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn inverse_composes_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pose = random_pose(&mut rng);
        let id = pose.compose(&pose.inverse());
        assert!((id.rotation - Mat3::identity()).abs().max() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(CameraIntrinsics::new(0.0, [1.0, 1.0], [2, 2]).is_err());
        assert!(CameraIntrinsics::new(1.0, [2.0, 1.0], [2, 2]).is_err());
        assert!(CameraIntrinsics::new(1.0, [0.0, 0.0], [0, 2]).is_err());
        assert!(Pose::new(Mat3::identity() * 2.0, Vec3::zeros()).is_err());
        assert!(Pose::new(-Mat3::identity(), Vec3::zeros()).is_err());
    }

    #[test]
    fn orbit_pose_looks_at_target() {
        let target = Vec3::new(0.0, 0.0, 15.0);
        for (pan, tilt) in [(0.0, 10.0), (130.0, 40.0), (270.0, -30.0), (45.0, 90.0)] {
            let pose = orbit_pose(target, 200.0, pan, tilt);
            pose.validate().unwrap();
            let pc = pose.to_camera(&target);
            assert_relative_eq!(pc.x, 0.0, epsilon = 1e-9);
            assert_relative_eq!(pc.y, 0.0, epsilon = 1e-9);
            assert_relative_eq!(pc.z, 200.0, epsilon = 1e-9);
        }
        // World up projects upwards in the image.
        let pose = orbit_pose(target, 200.0, 0.0, 20.0);
        let intr = simple();
        let a = project_point(&intr, &pose, &target).unwrap();
        let b = project_point(&intr, &pose, &(target + Vec3::z())).unwrap();
        assert!(b[1] < a[1]);
    }
}
