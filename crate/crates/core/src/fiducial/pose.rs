use nalgebra::{Matrix2x3, Matrix3, Matrix6, SMatrix, Vector3, Vector6};

use super::detect::Correspondence;
use super::homography::Homography;
use super::FiducialError;
use crate::geometry::{nearest_rotation, rotation_from_axis_angle, CameraIntrinsics, Pose, Vec3};

const MAX_ITERATIONS: usize = 100;
const RELATIVE_TOLERANCE: f64 = 1e-9;
const MAX_DAMPING: f64 = 1e16;
/// Reprojection RMS treated as exact.
const EXACT_RMS_PX: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    pub rms_reprojection_px: f64,
    pub inlier_count: usize,
}

/// One view's input to joint refinement.
#[derive(Debug, Clone)]
pub struct ViewObservations {
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub correspondences: Vec<Correspondence>,
}

#[derive(Debug, Clone)]
pub struct RefineReport {
    pub poses: Vec<Pose>,
    /// Accepted steps.
    pub iterations: usize,
    pub initial_rms_px: f64,
    pub final_rms_px: f64,
}

/// Planar-target pose from at least four non-collinear correspondences on
/// the `z = 0` plane.
pub fn solve_pose(
    correspondences: &[Correspondence],
    intrinsics: &CameraIntrinsics,
) -> Result<PoseEstimate, FiducialError> {
    check_planar_configuration(correspondences)?;
    let src: Vec<[f64; 2]> = correspondences.iter().map(|c| [c.point.x, c.point.y]).collect();
    let dst: Vec<[f64; 2]> = correspondences
        .iter()
        .map(|c| {
            let d = intrinsics.pixel_direction(c.pixel);
            [d.x / d.z, d.y / d.z]
        })
        .collect();
    let h = Homography::estimate(&src, &dst)
        .ok_or_else(|| FiducialError::Degenerate("homography estimation failed".into()))?;
    let pose = decompose_planar(&h.0)
        .ok_or_else(|| FiducialError::Degenerate("homography is not a planar view".into()))?;
    let mut views = [ViewObservations {
        intrinsics: intrinsics.clone(),
        pose,
        correspondences: correspondences.to_vec(),
    }];
    let report = refine_in_place(&mut views);
    Ok(PoseEstimate {
        pose: views[0].pose,
        rms_reprojection_px: report.final_rms_px,
        inlier_count: correspondences.len(),
    })
}

fn check_planar_configuration(c: &[Correspondence]) -> Result<(), FiducialError> {
    if c.len() < 4 {
        return Err(FiducialError::Degenerate(format!("{} correspondences, need 4", c.len())));
    }
    if c.iter().any(|c| c.point.z.abs() > 1e-9) {
        return Err(FiducialError::Degenerate("model points are not on z = 0".into()));
    }
    let n = c.len() as f64;
    let mx = c.iter().map(|c| c.point.x).sum::<f64>() / n;
    let my = c.iter().map(|c| c.point.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for c in c {
        let (dx, dy) = (c.point.x - mx, c.point.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (lo, hi) = (tr / 2.0 - disc, tr / 2.0 + disc);
    if !(hi > 0.0) || lo <= 1e-10 * hi {
        return Err(FiducialError::Degenerate("model points are collinear".into()));
    }
    Ok(())
}

/// Pose from `H ~ [r1 r2 t]` mapping plane coordinates to normalized image
/// coordinates.
fn decompose_planar(h: &Matrix3<f64>) -> Option<Pose> {
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let scale = 2.0 / (h1.norm() + h2.norm());
    if !scale.is_finite() {
        return None;
    }
    let sign = if h3.z < 0.0 { -1.0 } else { 1.0 };
    let r1 = h1 * scale * sign;
    let r2 = h2 * scale * sign;
    let t = h3 * scale * sign;
    let r = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]));
    Some(Pose::from_parts(r, t))
}

/// Root-mean-square reprojection error in pixels.
pub fn reprojection_rms(intrinsics: &CameraIntrinsics, pose: &Pose, correspondences: &[Correspondence]) -> f64 {
    if correspondences.is_empty() {
        return 0.0;
    }
    (view_cost(intrinsics, pose, correspondences) / correspondences.len() as f64).sqrt()
}

fn view_cost(intrinsics: &CameraIntrinsics, pose: &Pose, correspondences: &[Correspondence]) -> f64 {
    correspondences
        .iter()
        .map(|c| {
            let pc = pose.to_camera(&c.point);
            if pc.z <= 0.0 {
                return f64::INFINITY;
            }
            let p = intrinsics.project_camera(&pc);
            (p[0] - c.pixel[0]).powi(2) + (p[1] - c.pixel[1]).powi(2)
        })
        .sum()
}

/// Jacobian of the pixel projection with respect to the camera-frame point.
fn projection_jacobian(intrinsics: &CameraIntrinsics, pc: &Vec3) -> Matrix2x3<f64> {
    let mut j = Matrix2x3::zeros();
    let h = 1e-6 * pc.norm().max(1e-9);
    for k in 0..3 {
        let mut a = *pc;
        let mut b = *pc;
        a[k] += h;
        b[k] -= h;
        let pa = intrinsics.project_camera(&a);
        let pb = intrinsics.project_camera(&b);
        j[(0, k)] = (pa[0] - pb[0]) / (2.0 * h);
        j[(1, k)] = (pa[1] - pb[1]) / (2.0 * h);
    }
    j
}

/// Normal equations for a left-multiplied rotation increment and an
/// additive translation increment.
fn normal_equations(view: &ViewObservations) -> (Matrix6<f64>, Vector6<f64>) {
    let mut jtj = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    for c in &view.correspondences {
        let rp = view.pose.rotation * c.point;
        let pc = rp + view.pose.translation;
        let p = view.intrinsics.project_camera(&pc);
        let r = nalgebra::Vector2::new(p[0] - c.pixel[0], p[1] - c.pixel[1]);
        let jp = projection_jacobian(&view.intrinsics, &pc);
        let mut dpc = SMatrix::<f64, 3, 6>::zeros();
        dpc.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rp.cross_matrix()));
        dpc.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        let j = jp * dpc;
        jtj += j.transpose() * j;
        jtr += j.transpose() * r;
    }
    (jtj, jtr)
}

fn apply_step(pose: &Pose, step: &Vector6<f64>) -> Pose {
    let w = Vector3::new(step[0], step[1], step[2]);
    let dt = Vector3::new(step[3], step[4], step[5]);
    let r = nearest_rotation(&(rotation_from_axis_angle(&w) * pose.rotation));
    Pose::from_parts(r, pose.translation + dt)
}

/// Jointly minimizes the total squared reprojection error over all view
/// poses with a shared damping factor. The objective never increases.
pub fn refine_poses_global(views: &[ViewObservations]) -> RefineReport {
    let mut work = views.to_vec();
    refine_in_place(&mut work)
}

fn refine_in_place(views: &mut [ViewObservations]) -> RefineReport {
    let total = |vs: &[ViewObservations]| -> f64 {
        vs.iter().map(|v| view_cost(&v.intrinsics, &v.pose, &v.correspondences)).sum()
    };
    let count: usize = views.iter().map(|v| v.correspondences.len()).sum();
    let rms = |cost: f64| if count == 0 { 0.0 } else { (cost / count as f64).sqrt() };
    let mut cost = total(views);
    let initial = cost;
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut rounds = 0;
    while rounds < MAX_ITERATIONS && cost.is_finite() && rms(cost) > EXACT_RMS_PX {
        rounds += 1;
        let systems: Vec<_> = views.iter().map(normal_equations).collect();
        loop {
            let candidates: Option<Vec<Pose>> = views
                .iter()
                .zip(&systems)
                .map(|(v, (jtj, jtr))| {
                    let mut a = *jtj;
                    for i in 0..6 {
                        a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
                    }
                    a.cholesky().map(|ch| apply_step(&v.pose, &(-ch.solve(jtr))))
                })
                .collect();
            let trial_cost = candidates.as_ref().map(|poses| {
                views
                    .iter()
                    .zip(poses)
                    .map(|(v, p)| view_cost(&v.intrinsics, p, &v.correspondences))
                    .sum::<f64>()
            });
            match (candidates, trial_cost) {
                (Some(poses), Some(c)) if c < cost => {
                    let improvement = (cost - c) / cost;
                    if improvement < RELATIVE_TOLERANCE {
                        return finish(views, iterations, rms(initial), rms(cost));
                    }
                    for (v, p) in views.iter_mut().zip(poses) {
                        v.pose = p;
                    }
                    cost = c;
                    iterations += 1;
                    lambda = (lambda / 10.0).max(1e-12);
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > MAX_DAMPING {
                        return finish(views, iterations, rms(initial), rms(cost));
                    }
                }
            }
        }
    }
    finish(views, iterations, rms(initial), rms(cost))
}

fn finish(views: &[ViewObservations], iterations: usize, initial_rms_px: f64, final_rms_px: f64) -> RefineReport {
    RefineReport {
        poses: views.iter().map(|v| v.pose).collect(),
        iterations,
        initial_rms_px,
        final_rms_px,
    }
}
