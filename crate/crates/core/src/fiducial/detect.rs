use std::f64::consts::TAU;

use nalgebra::{DMatrix, Matrix2, Matrix3, SMatrix, SVector, Vector3};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::homography::{smallest_eigenvector, Homography};
use super::{FiducialError, FiducialModel};
use crate::geometry::Vec3;
use crate::imaging::{luma, otsu_threshold, sample_bilinear, sample_gray, BinaryImage, GrayF, RgbF};

/// One detected keypoint: image position and its mat-plane coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub pixel: [f64; 2],
    pub point: Vec3,
    /// Index into `FiducialModel::keypoints_3d`.
    pub keypoint: usize,
}

#[derive(Debug, Clone)]
pub struct DetectConfig {
    pub min_correspondences: usize,
    pub ransac_iterations: usize,
    /// Boundary points beyond this Sampson distance (px) are ellipse outliers.
    pub ellipse_tolerance_px: f64,
    pub max_candidates: usize,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            min_correspondences: 8,
            ransac_iterations: 400,
            ellipse_tolerance_px: 1.5,
            max_candidates: 4,
            seed: 0x6d61_74,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatDetection {
    pub correspondences: Vec<Correspondence>,
    /// Mat plane (mm) to image (px).
    pub homography: Homography,
    pub ink_rgb: [f32; 3],
    pub paper_rgb: [f32; 3],
    /// RMS of inlier edge residuals in the final refinement round.
    pub edge_rms_px: f64,
    pub edge_inliers: usize,
}

/// Finds the mat, decodes its orientation and returns sub-pixel keypoints.
pub fn detect_mat(image: &RgbF, model: &FiducialModel, config: &DetectConfig) -> Result<MatDetection, FiducialError> {
    model.validate()?;
    let lum = luma(image);
    let (w, h) = lum.dimensions();
    if w < 16 || h < 16 {
        return Err(FiducialError::NotFound("image too small".into()));
    }
    let mut sorted: Vec<f32> = lum.as_raw().clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let p99 = sorted[(sorted.len() - 1) * 99 / 100];
    let p01 = sorted[(sorted.len() - 1) / 100];
    if p99 - p01 < 0.05 {
        return Err(FiducialError::NotFound("image has no contrast".into()));
    }
    let mut thresholds = vec![otsu_threshold(lum.as_raw().iter().copied())];
    for f in [0.5, 0.35, 0.65] {
        let t = p01 + f * (p99 - p01);
        if thresholds.iter().all(|&u| (u - t).abs() > 0.03) {
            thresholds.push(t);
        }
    }
    let edges = edge_samples(model);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let mut ambiguous = None;
    for &t in &thresholds {
        for ellipse in ellipse_candidates(&lum, t, config, &mut rng) {
            for rho in [model.ring_outer(), model.ring_inner(), model.radius()] {
                let h0 = affine_homography(&ellipse, rho);
                match refine(image, &lum, model, &edges, h0, config) {
                    Ok(det) => return Ok(det),
                    Err(e @ FiducialError::AmbiguousCode(_)) => ambiguous = Some(e),
                    Err(e) => log::trace!("threshold {t:.3}, radius {rho:.2}: {e}"),
                }
            }
        }
    }
    Err(ambiguous.unwrap_or_else(|| FiducialError::NotFound("no ring hypothesis survived refinement".into())))
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    centre: [f64; 2],
    /// Semi-axes, `a >= b`.
    a: f64,
    b: f64,
    /// Direction of the `a` axis.
    angle: f64,
}

impl Ellipse {
    /// Affine map taking the circle of radius `rho` onto this ellipse.
    fn affine(&self, rho: f64) -> Matrix2<f64> {
        let (s, c) = self.angle.sin_cos();
        Matrix2::new(c, -s, s, c) * Matrix2::new(self.a / rho, 0.0, 0.0, self.b / rho)
    }
}

fn ellipse_candidates(lum: &GrayF, threshold: f32, config: &DetectConfig, rng: &mut impl Rng) -> Vec<Ellipse> {
    let (w, h) = lum.dimensions();
    let dark = BinaryImage::from_fn(w, h, |x, y| lum.get_pixel(x, y).0[0] < threshold);
    let comps = dark.components();
    let min_area = ((w as usize * h as usize) / 5000).max(60);
    let mut order: Vec<usize> = (0..comps.areas.len())
        .filter(|&i| {
            let b = comps.bboxes[i];
            comps.areas[i] >= min_area && b[2] - b[0] >= 24 && b[3] - b[1] >= 8
        })
        .collect();
    order.sort_by(|&a, &b| comps.areas[b].cmp(&comps.areas[a]).then(a.cmp(&b)));
    order.truncate(config.max_candidates);
    let mut out = Vec::new();
    for id in order {
        let b = comps.bboxes[id];
        let mut pts = Vec::new();
        for y in b[1]..=b[3] {
            for x in b[0]..=b[2] {
                let i = (y * w + x) as usize;
                if comps.labels[i] != id as u32 {
                    continue;
                }
                let border = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 && !dark.get(nx as u32, ny as u32)
                });
                if border {
                    pts.push([x as f64 + 0.5, y as f64 + 0.5]);
                }
            }
        }
        let stride = pts.len().div_ceil(3000).max(1);
        let mut pts: Vec<[f64; 2]> = pts.into_iter().step_by(stride).collect();
        for _ in 0..2 {
            let Some((e, inliers)) = ransac_ellipse(&pts, config, rng) else {
                break;
            };
            out.push(e);
            pts = pts.into_iter().zip(inliers).filter(|(_, i)| !i).map(|(p, _)| p).collect();
        }
    }
    out
}

fn ransac_ellipse(pts: &[[f64; 2]], config: &DetectConfig, rng: &mut impl Rng) -> Option<(Ellipse, Vec<bool>)> {
    if pts.len() < 30 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let rms = (pts.iter().map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2)).sum::<f64>() / n).sqrt();
    if rms < 1.0 {
        return None;
    }
    let s = 1.0 / rms;
    let np: Vec<[f64; 2]> = pts.iter().map(|p| [(p[0] - mx) * s, (p[1] - my) * s]).collect();
    let tol = config.ellipse_tolerance_px * s;
    let inliers_of = |c: &[f64; 6]| -> Vec<bool> { np.iter().map(|p| sampson(c, p) < tol).collect() };
    let mut best: Option<([f64; 6], usize)> = None;
    for _ in 0..config.ransac_iterations {
        let mut idx = [0usize; 5];
        for k in 0..5 {
            idx[k] = rng.gen_range(0..np.len());
        }
        let sample: Vec<[f64; 2]> = idx.iter().map(|&i| np[i]).collect();
        let Some(c) = fit_conic(&sample) else { continue };
        if to_ellipse(&c).is_none() {
            continue;
        }
        let count = np.iter().filter(|p| sampson(&c, p) < tol).count();
        if best.as_ref().is_none_or(|b| count > b.1) {
            best = Some((c, count));
        }
    }
    let (mut conic, count) = best?;
    if count < 30.max(pts.len() / 10) {
        return None;
    }
    let mut inliers = inliers_of(&conic);
    for _ in 0..3 {
        let chosen: Vec<[f64; 2]> = np.iter().zip(&inliers).filter(|(_, &i)| i).map(|(p, _)| *p).collect();
        conic = fit_conic(&chosen)?;
        inliers = inliers_of(&conic);
    }
    let e = to_ellipse(&conic)?;
    let e = Ellipse {
        centre: [e.centre[0] / s + mx, e.centre[1] / s + my],
        a: e.a / s,
        b: e.b / s,
        angle: e.angle,
    };
    if e.b < 4.0 {
        return None;
    }
    Some((e, inliers))
}

fn conic_row(p: &[f64; 2]) -> [f64; 6] {
    [p[0] * p[0], p[0] * p[1], p[1] * p[1], p[0], p[1], 1.0]
}

fn fit_conic(pts: &[[f64; 2]]) -> Option<[f64; 6]> {
    if pts.len() < 5 {
        return None;
    }
    let mut m = DMatrix::<f64>::zeros(6, 6);
    for p in pts {
        let r = SVector::<f64, 6>::from(conic_row(p));
        let outer = r * r.transpose();
        for i in 0..6 {
            for j in 0..6 {
                m[(i, j)] += outer[(i, j)];
            }
        }
    }
    let v = smallest_eigenvector(m)?;
    let c = [v[0], v[1], v[2], v[3], v[4], v[5]];
    c.iter().all(|x| x.is_finite()).then_some(c)
}

fn sampson(c: &[f64; 6], p: &[f64; 2]) -> f64 {
    let q: f64 = conic_row(p).iter().zip(c).map(|(a, b)| a * b).sum();
    let gx = 2.0 * c[0] * p[0] + c[1] * p[1] + c[3];
    let gy = c[1] * p[0] + 2.0 * c[2] * p[1] + c[4];
    q.abs() / (gx * gx + gy * gy).sqrt().max(1e-300)
}

fn to_ellipse(c: &[f64; 6]) -> Option<Ellipse> {
    let [a, b, cc, d, e, f] = *c;
    if b * b - 4.0 * a * cc >= 0.0 {
        return None;
    }
    let m = Matrix2::new(2.0 * a, b, b, 2.0 * cc);
    let centre = m.try_inverse()? * nalgebra::Vector2::new(-d, -e);
    let (x, y) = (centre.x, centre.y);
    let f0 = a * x * x + b * x * y + cc * y * y + d * x + e * y + f;
    let eig = Matrix2::new(a, b / 2.0, b / 2.0, cc).symmetric_eigen();
    let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    let s0 = -f0 / l0;
    let s1 = -f0 / l1;
    if !(s0 > 0.0 && s1 > 0.0) {
        return None;
    }
    let (major, minor, k) = if s0 >= s1 { (s0.sqrt(), s1.sqrt(), 0) } else { (s1.sqrt(), s0.sqrt(), 1) };
    let v = eig.eigenvectors.column(k);
    Some(Ellipse {
        centre: [x, y],
        a: major,
        b: minor,
        angle: v[1].atan2(v[0]),
    })
}

/// Mat-to-image map sending the circle of radius `rho` onto `ellipse`,
/// with arbitrary in-plane rotation.
fn affine_homography(ellipse: &Ellipse, rho: f64) -> Homography {
    let lin = ellipse.affine(rho);
    Homography(Matrix3::new(
        lin[(0, 0)],
        lin[(0, 1)],
        ellipse.centre[0],
        lin[(1, 0)],
        lin[(1, 1)],
        ellipse.centre[1],
        0.0,
        0.0,
        1.0,
    ))
}

#[derive(Debug, Clone, Copy)]
enum EdgeKind {
    Circle(f64),
    /// Radial segment at this angle, belonging to transition `usize`.
    Radial(f64, usize),
}

#[derive(Debug, Clone, Copy)]
struct EdgeSample {
    q: [f64; 2],
    /// Unit model-plane normal.
    m: [f64; 2],
    /// Ink lies on the `+m` side.
    ink_positive: bool,
    kind: EdgeKind,
}

fn edge_samples(model: &FiducialModel) -> Vec<EdgeSample> {
    let mut out = Vec::new();
    let mut circle = |r: f64, theta: f64, ink_positive: bool| {
        let (s, c) = theta.sin_cos();
        out.push(EdgeSample {
            q: [r * c, r * s],
            m: [c, s],
            ink_positive,
            kind: EdgeKind::Circle(r),
        });
    };
    for i in 0..720 {
        let t = TAU * (i as f64 + 0.5) / 720.0;
        circle(model.ring_outer(), t, false);
        circle(model.ring_inner(), t, true);
    }
    for i in 0..120 {
        circle(model.dot_radius(), TAU * (i as f64 + 0.5) / 120.0, false);
    }
    let step = model.sector_angle();
    for (k, &ink) in model.code_bits.iter().enumerate() {
        if !ink {
            continue;
        }
        for i in 0..8 {
            let t = (k as f64 + 0.15 + 0.7 * i as f64 / 7.0) * step;
            circle(model.code_outer(), t, false);
            circle(model.code_inner(), t, true);
        }
    }
    let (r0, r1) = (model.code_inner(), model.code_outer());
    for (idx, k) in model.transitions().into_iter().enumerate() {
        let theta = k as f64 * step;
        let (s, c) = theta.sin_cos();
        for i in 0..12 {
            let r = r0 + (r1 - r0) * (0.1 + 0.8 * i as f64 / 11.0);
            out.push(EdgeSample {
                q: [r * c, r * s],
                m: [-s, c],
                ink_positive: model.code_bits[k],
                kind: EdgeKind::Radial(theta, idx),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct EdgeHit {
    sample: usize,
    pixel: [f64; 2],
    /// Pixels per mm along the normal.
    scale: f64,
}

struct Levels {
    ink: f32,
    paper: f32,
}

impl Levels {
    fn mid(&self) -> f32 {
        0.5 * (self.ink + self.paper)
    }

    fn contrast(&self) -> f32 {
        self.paper - self.ink
    }
}

fn median(v: &mut [f32]) -> Option<f32> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    Some(v[v.len() / 2])
}

fn in_image(lum: &GrayF, p: [f64; 2], margin: f64) -> bool {
    let (w, h) = lum.dimensions();
    p[0] >= margin && p[1] >= margin && p[0] <= w as f64 - margin && p[1] <= h as f64 - margin
}

/// Model points that should be solidly ink or paper.
fn level_probes(model: &FiducialModel) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let mut ink = Vec::new();
    let mut paper = Vec::new();
    let r_ink = 0.5 * (model.ring_inner() + model.ring_outer());
    let r_paper = 0.5 * (model.code_outer() + model.ring_inner());
    let r_paper2 = 0.5 * (model.dot_radius() + model.code_inner());
    for i in 0..360 {
        let (s, c) = (TAU * i as f64 / 360.0).sin_cos();
        ink.push([r_ink * c, r_ink * s]);
        paper.push([r_paper * c, r_paper * s]);
        paper.push([r_paper2 * c, r_paper2 * s]);
    }
    (ink, paper)
}

fn estimate_levels(lum: &GrayF, model: &FiducialModel, h: &Homography) -> Option<Levels> {
    let (ink_q, paper_q) = level_probes(model);
    let read = |qs: &[[f64; 2]]| -> Vec<f32> {
        qs.iter()
            .map(|&q| h.apply(q))
            .filter(|&p| in_image(lum, p, 1.0))
            .map(|p| sample_gray(lum, p[0], p[1]))
            .collect()
    };
    let mut ink = read(&ink_q);
    let mut paper = read(&paper_q);
    let levels = Levels {
        ink: median(&mut ink)?,
        paper: median(&mut paper)?,
    };
    (levels.contrast() > 0.05).then_some(levels)
}

/// Sub-pixel mid-level crossing of the expected polarity nearest to the
/// predicted edge position.
fn find_edge(lum: &GrayF, levels: &Levels, e: &EdgeSample, h: &Homography, window: f64) -> Option<EdgeHit> {
    const EPS: f64 = 1e-3;
    let p0 = h.apply(e.q);
    if !in_image(lum, p0, window + 4.0) {
        return None;
    }
    // Image images of the model normal and tangent directions.
    let pm = h.apply([e.q[0] + EPS * e.m[0], e.q[1] + EPS * e.m[1]]);
    let pt = h.apply([e.q[0] - EPS * e.m[1], e.q[1] + EPS * e.m[0]]);
    let dm = [(pm[0] - p0[0]) / EPS, (pm[1] - p0[1]) / EPS];
    let dt = [(pt[0] - p0[0]) / EPS, (pt[1] - p0[1]) / EPS];
    let tl = dt[0].hypot(dt[1]);
    if !(tl > 0.0) {
        return None;
    }
    let mut n = [-dt[1] / tl, dt[0] / tl];
    let along = n[0] * dm[0] + n[1] * dm[1];
    if along < 0.0 {
        n = [-n[0], -n[1]];
    }
    // Pixels along `n` per mm of offset along the model normal.
    let len = along.abs();
    if !(len > 1e-9) {
        return None;
    }
    let mid = levels.mid();
    let g = |t: f64| sample_gray(lum, p0[0] + t * n[0], p0[1] + t * n[1]) - mid;
    // Along +n the profile must go paper -> ink when ink is on the + side.
    let sign = if e.ink_positive { 1.0f32 } else { -1.0 };
    let steps = (2.0 * window).ceil() as i64;
    let mut best: Option<f64> = None;
    let mut prev = g(-(steps as f64) * 0.5) * sign;
    for i in (-steps + 1)..=steps {
        let t = i as f64 * 0.5;
        let cur = g(t) * sign;
        if prev > 0.0 && cur <= 0.0 {
            let tc = t - 0.5 + 0.5 * (prev / (prev - cur)) as f64;
            if best.is_none_or(|b| tc.abs() < b.abs()) {
                best = Some(tc);
            }
        }
        prev = cur;
    }
    let tc = best?;
    let c = 0.3 * levels.contrast();
    let before = (g(tc - 1.0) + g(tc - 2.0) + g(tc - 3.0)) / 3.0 * sign;
    let after = (g(tc + 1.0) + g(tc + 2.0) + g(tc + 3.0)) / 3.0 * sign;
    if before < c || after > -c {
        return None;
    }
    Some(EdgeHit {
        sample: 0,
        pixel: [p0[0] + tc * n[0], p0[1] + tc * n[1]],
        scale: len,
    })
}

/// Image normalization used while optimizing the inverse homography.
struct Frame {
    origin: [f64; 2],
    sigma: f64,
}

impl Frame {
    fn matrix(&self) -> Matrix3<f64> {
        let s = 1.0 / self.sigma;
        Matrix3::new(s, 0.0, -s * self.origin[0], 0.0, s, -s * self.origin[1], 0.0, 0.0, 1.0)
    }

    fn to_norm(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.origin[0]) / self.sigma, (p[1] - self.origin[1]) / self.sigma]
    }
}

fn edge_residual(e: &EdgeSample, q: [f64; 2]) -> (f64, [f64; 2]) {
    match e.kind {
        EdgeKind::Circle(r) => {
            let n = q[0].hypot(q[1]).max(1e-12);
            (n - r, [q[0] / n, q[1] / n])
        }
        EdgeKind::Radial(theta, _) => {
            let (s, c) = theta.sin_cos();
            (-s * q[0] + c * q[1], [-s, c])
        }
    }
}

const HUBER_PX: f64 = 1.0;

fn huber(r: f64) -> f64 {
    let a = r.abs();
    if a <= HUBER_PX {
        0.5 * r * r
    } else {
        HUBER_PX * (a - 0.5 * HUBER_PX)
    }
}

/// Robust Levenberg–Marquardt fit of the inverse homography (image ->
/// mat plane) to fixed edge observations.
fn fit_inverse(edges: &[EdgeSample], hits: &[EdgeHit], frame: &Frame, h: &Homography) -> Option<Homography> {
    let g0 = h.inverse()?.0 * frame.matrix().try_inverse()?;
    if g0[(2, 2)].abs() < 1e-12 {
        return None;
    }
    let g0 = g0 / g0[(2, 2)];
    // Column-major, matching nalgebra storage.
    let mut g = SVector::<f64, 8>::from_column_slice(&g0.as_slice()[..8]);
    let unpack = |g: &SVector<f64, 8>| -> Matrix3<f64> {
        Matrix3::new(g[0], g[3], g[6], g[1], g[4], g[7], g[2], g[5], 1.0)
    };
    let pts: Vec<[f64; 2]> = hits.iter().map(|hit| frame.to_norm(hit.pixel)).collect();
    let cost = |g: &SVector<f64, 8>| -> f64 {
        let m = unpack(g);
        hits.iter()
            .zip(&pts)
            .map(|(hit, p)| {
                let v = m * Vector3::new(p[0], p[1], 1.0);
                let (r, _) = edge_residual(&edges[hit.sample], [v.x / v.z, v.y / v.z]);
                huber(r * hit.scale)
            })
            .sum()
    };
    let mut current = cost(&g);
    let mut lambda = 1e-3;
    for _ in 0..30 {
        let m = unpack(&g);
        let mut jtj = SMatrix::<f64, 8, 8>::zeros();
        let mut jtr = SVector::<f64, 8>::zeros();
        for (hit, p) in hits.iter().zip(&pts) {
            let v = m * Vector3::new(p[0], p[1], 1.0);
            let (x, y) = (v.x / v.z, v.y / v.z);
            let (r, grad) = edge_residual(&edges[hit.sample], [x, y]);
            let r = r * hit.scale;
            let wgt = if r.abs() <= HUBER_PX { 1.0 } else { HUBER_PX / r.abs() };
            let iw = 1.0 / v.z;
            let dx = [p[0] * iw, 0.0, -x * p[0] * iw, p[1] * iw, 0.0, -x * p[1] * iw, iw, 0.0];
            let dy = [0.0, p[0] * iw, -y * p[0] * iw, 0.0, p[1] * iw, -y * p[1] * iw, 0.0, iw];
            let j = SVector::<f64, 8>::from_fn(|i, _| hit.scale * (grad[0] * dx[i] + grad[1] * dy[i]));
            jtj += wgt * j * j.transpose();
            jtr += wgt * j * r;
        }
        let diag_max = (0..8).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        let mut accepted = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for i in 0..8 {
                a[(i, i)] += lambda * jtj[(i, i)] + 1e-12 * diag_max;
            }
            let Some(ch) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let cand = g - ch.solve(&jtr);
            let c = cost(&cand);
            if c < current {
                let rel = (current - c) / current.max(1e-300);
                g = cand;
                current = c;
                lambda = (lambda / 10.0).max(1e-9);
                accepted = rel > 1e-10;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    let h = (unpack(&g) * frame.matrix()).try_inverse()?;
    Some(Homography(h).normalized())
}

/// Reads the code ring through a homography that is correct up to an
/// in-plane rotation and reflection, and returns the homography with both
/// resolved.
fn decode_code(
    lum: &GrayF,
    levels: &Levels,
    model: &FiducialModel,
    h: &Homography,
) -> Result<Homography, FiducialError> {
    const PER_SECTOR: usize = 64;
    let m = PER_SECTOR * model.sector_count as usize;
    let r_mid = 0.5 * (model.code_inner() + model.code_outer());
    let mid = levels.mid();
    let reads: Vec<(usize, bool)> = (0..m)
        .filter_map(|j| {
            let theta = TAU * (j as f64 + 0.5) / m as f64;
            let p = h.apply([r_mid * theta.cos(), r_mid * theta.sin()]);
            in_image(lum, p, 1.0).then(|| (j, sample_gray(lum, p[0], p[1]) < mid))
        })
        .collect();
    if reads.len() < m / 3 {
        return Err(FiducialError::NotFound("code ring mostly outside the image".into()));
    }
    // Sample j at shift d shows model sample (j - d) unreflected, (d - j - 1) reflected.
    let bits = &model.code_bits;
    let mut scores = Vec::with_capacity(2 * m);
    for flip in [false, true] {
        for d in 0..m {
            let score = reads
                .iter()
                .filter(|&&(j, ink)| {
                    let idx = if flip { (d + 2 * m - j - 1) % m } else { (j + m - d) % m };
                    bits[idx / PER_SECTOR] == ink
                })
                .count();
            scores.push(score);
        }
    }
    let best = (0..2 * m).max_by(|&a, &b| scores[a].cmp(&scores[b]).then(b.cmp(&a))).unwrap();
    let (flip, d) = (best >= m, best % m);
    let runner_up = (0..2 * m)
        .filter(|&c| {
            let dd = (c % m).abs_diff(d);
            (c >= m) != flip || dd.min(m - dd) > PER_SECTOR
        })
        .map(|c| scores[c])
        .max()
        .unwrap_or(0);
    let known = reads.len() as f64;
    let top = scores[best];
    if (top as f64) < 0.75 * known {
        return Err(FiducialError::NotFound(format!("code ring agreement {top} of {known}")));
    }
    if ((top - runner_up) as f64) < 0.1 * known {
        return Err(FiducialError::AmbiguousCode(format!(
            "best alignment {top} vs runner-up {runner_up} of {known} samples"
        )));
    }
    // Centre of the plateau of maximal shifts around d.
    let base = if flip { m } else { 0 };
    let run = |step: i64| {
        let mut k = 0i64;
        while k < PER_SECTOR as i64 && scores[base + (d as i64 + (k + 1) * step).rem_euclid(m as i64) as usize] == top {
            k += 1;
        }
        k
    };
    let centre = d as f64 + 0.5 * (run(1) - run(-1)) as f64;
    let delta = TAU * centre / m as f64;
    let (sd, cd) = delta.sin_cos();
    let f = if flip { -1.0 } else { 1.0 };
    Ok(Homography(h.0 * Matrix3::new(cd, -sd, 0.0, sd, cd, 0.0, 0.0, 0.0, 1.0) * Matrix3::new(1.0, 0.0, 0.0, 0.0, f, 0.0, 0.0, 0.0, 1.0)))
}

fn collect_hits(lum: &GrayF, levels: &Levels, edges: &[EdgeSample], h: &Homography, window: f64) -> Vec<EdgeHit> {
    edges
        .iter()
        .enumerate()
        .filter_map(|(i, e)| find_edge(lum, levels, e, h, window).map(|hit| EdgeHit { sample: i, ..hit }))
        .collect()
}

fn refine(
    image: &RgbF,
    lum: &GrayF,
    model: &FiducialModel,
    edges: &[EdgeSample],
    h0: Homography,
    config: &DetectConfig,
) -> Result<MatDetection, FiducialError> {
    let lost = |what: &str| FiducialError::NotFound(what.to_string());
    let (w, hgt) = lum.dimensions();
    let frame = Frame {
        origin: [w as f64 / 2.0, hgt as f64 / 2.0],
        sigma: w.max(hgt) as f64 / 2.0,
    };
    // The solid-ring circles come first.
    let ring_edges = &edges[..1440];
    let mut levels = estimate_levels(lum, model, &h0).ok_or_else(|| lost("no ink/paper contrast"))?;
    let mut h = h0;
    for window in [20.0, 8.0] {
        let hits = collect_hits(lum, &levels, ring_edges, &h, window);
        if hits.len() < 60 {
            return Err(lost("too few ring edges"));
        }
        h = fit_inverse(ring_edges, &hits, &frame, &h).ok_or_else(|| lost("ring fit diverged"))?;
    }
    levels = estimate_levels(lum, model, &h).ok_or_else(|| lost("no ink/paper contrast"))?;
    h = decode_code(lum, &levels, model, &h)?;
    let mut hits = Vec::new();
    for window in [6.0, 3.0, 2.0, 2.0] {
        hits = collect_hits(lum, &levels, edges, &h, window);
        if hits.len() < 60 {
            return Err(lost("too few ring edges"));
        }
        h = fit_inverse(edges, &hits, &frame, &h).ok_or_else(|| lost("edge fit diverged"))?;
    }
    let ginv = h.inverse().ok_or_else(|| lost("singular homography"))?;
    let residual = |hit: &EdgeHit| {
        let q = ginv.apply(hit.pixel);
        edge_residual(&edges[hit.sample], q).0 * hit.scale
    };
    let inliers: Vec<&EdgeHit> = hits.iter().filter(|hit| residual(hit).abs() < 1.0).collect();
    if inliers.len() < 100 || inliers.len() * 2 < hits.len() {
        return Err(lost("edge evidence below threshold"));
    }
    let edge_rms_px = (inliers.iter().map(|h| residual(h).powi(2)).sum::<f64>() / inliers.len() as f64).sqrt();

    let transitions = model.transitions();
    let mut support = vec![0usize; transitions.len()];
    for hit in &inliers {
        if let EdgeKind::Radial(_, idx) = edges[hit.sample].kind {
            support[idx] += 1;
        }
    }
    let mut correspondences = Vec::new();
    for (idx, &count) in support.iter().enumerate() {
        if count < 6 {
            continue;
        }
        for k in [2 * idx, 2 * idx + 1] {
            let point = model.keypoints_3d[k];
            let pixel = h.apply([point.x, point.y]);
            if in_image(lum, pixel, 1.0) {
                correspondences.push(Correspondence { pixel, point, keypoint: k });
            }
        }
    }
    if correspondences.len() < config.min_correspondences {
        return Err(lost(&format!(
            "{} keypoints, need {}",
            correspondences.len(),
            config.min_correspondences
        )));
    }
    let (ink_rgb, paper_rgb) = colour_levels(image, model, &h, levels.mid());
    Ok(MatDetection {
        correspondences,
        homography: h,
        ink_rgb,
        paper_rgb,
        edge_rms_px,
        edge_inliers: inliers.len(),
    })
}

fn colour_levels(image: &RgbF, model: &FiducialModel, h: &Homography, mid: f32) -> ([f32; 3], [f32; 3]) {
    let (ink_q, paper_q) = level_probes(model);
    let (w, hh) = image.dimensions();
    let read = |qs: &[[f64; 2]], want_dark: bool| -> [f32; 3] {
        let px: Vec<[f32; 3]> = qs
            .iter()
            .map(|&q| h.apply(q))
            .filter(|p| p[0] >= 1.0 && p[1] >= 1.0 && p[0] <= w as f64 - 1.0 && p[1] <= hh as f64 - 1.0)
            .map(|p| sample_bilinear(image, p[0], p[1]))
            .filter(|c| (crate::imaging::luma_of(c) < mid) == want_dark)
            .collect();
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let mut v: Vec<f32> = px.iter().map(|c| c[ch]).collect();
            *o = median(&mut v).unwrap_or(0.0);
        }
        out
    };
    (read(&ink_q, true), read(&paper_q, false))
}
