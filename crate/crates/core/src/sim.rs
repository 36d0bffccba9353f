//! Synthetic capture: ray-cast renders of a ground-truth specimen standing
//! over the fiducial mat, with exact alpha and depth, plus thin-lens
//! defocus stacks for macro mode.

use image::Rgb;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::Bvh;
use crate::fiducial::{FiducialModel, MatSurface, INK_REFLECTANCE, PAPER_REFLECTANCE};
use crate::geometry::{backproject_pixel, CameraIntrinsics, Pose, Ray, Vec3};
use crate::imaging::{BinaryImage, RgbF};
use crate::mesh::TexturedMesh;
use crate::plan::LensModel;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("no rail positions")]
    NoRailPositions,
}

/// Solid (volumetric) surface colouring, independent of UVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Albedo {
    Uniform { colour: [f32; 3] },
    Checker { a: [f32; 3], b: [f32; 3], size_mm: f64 },
    Waves { a: [f32; 3], b: [f32; 3], period_mm: f64 },
    Noise { a: [f32; 3], b: [f32; 3], scale_mm: f64, seed: u64 },
}

impl Albedo {
    pub fn at(&self, p: &Vec3) -> [f32; 3] {
        match self {
            Albedo::Uniform { colour } => *colour,
            Albedo::Checker { a, b, size_mm } => {
                let k = (p.x / size_mm).floor() + (p.y / size_mm).floor() + (p.z / size_mm).floor();
                if (k as i64).rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Albedo::Waves { a, b, period_mm } => {
                let w = std::f64::consts::TAU / period_mm;
                let t = 0.5 + 0.5 * (w * p.x).sin() * (w * p.y).cos() * (w * p.z + 0.7).sin();
                mix(a, b, t as f32)
            }
            Albedo::Noise { a, b, scale_mm, seed } => {
                let q = p / *scale_mm;
                let t = 0.65 * value_noise(&q, *seed) + 0.35 * value_noise(&(q * 2.7), seed.wrapping_add(1));
                mix(a, b, t as f32)
            }
        }
    }
}

fn mix(a: &[f32; 3], b: &[f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn lattice(x: i64, y: i64, z: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [x, y, z] {
        h ^= v as u64;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Trilinear value noise in `[0, 1]` with smoothstep fade.
fn value_noise(p: &Vec3, seed: u64) -> f64 {
    let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let fade = |t: f64| t * t * (3.0 - 2.0 * t);
    let (u, v, w) = (fade(p.x - fx), fade(p.y - fy), fade(p.z - fz));
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let wt = (if dx == 1 { u } else { 1.0 - u }) * (if dy == 1 { v } else { 1.0 - v }) * (if dz == 1 { w } else { 1.0 - w });
                acc += wt * lattice(ix + dx, iy + dy, iz + dz, seed);
            }
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Light {
    /// Unit vector towards the light, world frame.
    pub direction: Vec3,
    pub intensity: f32,
    pub ambient: f32,
    /// Blinn-Phong highlight strength; zero disables the term.
    pub specular: f32,
    pub shininess: f32,
}

impl Default for Light {
    fn default() -> Self {
        Self {
            direction: Vec3::new(0.3, -0.2, 1.0).normalize(),
            intensity: 0.75,
            ambient: 0.3,
            specular: 0.0,
            shininess: 40.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneObject {
    pub mesh: TexturedMesh,
    pub albedo: Albedo,
}

/// Ground-truth scene: objects over a mat lying in `z = 0`, centred at the
/// origin.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub objects: Vec<SceneObject>,
    pub mat: Option<FiducialModel>,
    pub background: [f32; 3],
    pub light: Light,
}

impl SyntheticScene {
    pub fn new(
        objects: Vec<SceneObject>,
        mat: Option<FiducialModel>,
        background: [f32; 3],
        light: Light,
    ) -> Result<Self, SimError> {
        let scene = Self {
            objects,
            mat,
            background,
            light,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// The specimen must sit over the turntable axis, as laser alignment
    /// ensures on the rig.
    pub fn validate(&self) -> Result<(), SimError> {
        if let (Some(mat), Some(first)) = (&self.mat, self.objects.first()) {
            let c = first.mesh.bounds().centre();
            let off = c.x.hypot(c.y);
            if off > 0.1 * mat.diameter {
                return Err(SimError::InvalidScene(format!(
                    "specimen centre is {off:.3} mm from the rotation axis (limit {:.3})",
                    0.1 * mat.diameter
                )));
            }
        }
        if !(self.light.direction.norm() > 0.0) {
            return Err(SimError::InvalidScene("light direction is zero".into()));
        }
        Ok(())
    }
}

/// Acceleration structures built once per scene.
pub struct PreparedScene<'a> {
    scene: &'a SyntheticScene,
    bvhs: Vec<Bvh>,
    light_dir: Vec3,
}

#[derive(Debug, Clone, Copy)]
enum Surface {
    Object { object: usize, triangle: u32 },
    Mat(MatSurface),
}

#[derive(Debug, Clone, Copy)]
struct Shade {
    t: f64,
    surface: Surface,
    point: Vec3,
}

impl<'a> PreparedScene<'a> {
    pub fn new(scene: &'a SyntheticScene) -> Self {
        Self {
            scene,
            bvhs: scene.objects.iter().map(|o| Bvh::build(&o.mesh)).collect(),
            light_dir: scene.light.direction.normalize(),
        }
    }

    fn trace(&self, ray: &Ray) -> Option<Shade> {
        let mut best: Option<Shade> = None;
        for (i, bvh) in self.bvhs.iter().enumerate() {
            let t_max = best.map_or(f64::INFINITY, |b| b.t);
            if let Some(hit) = bvh.intersect(ray, 0.0, t_max) {
                best = Some(Shade {
                    t: hit.t,
                    surface: Surface::Object {
                        object: i,
                        triangle: hit.triangle,
                    },
                    point: ray.at(hit.t),
                });
            }
        }
        if let Some(mat) = &self.scene.mat {
            if ray.direction.z != 0.0 {
                let t = -ray.origin.z / ray.direction.z;
                if t > 0.0 && best.is_none_or(|b| t < b.t) {
                    let p = ray.at(t);
                    let s = mat.surface_at(p.x, p.y);
                    if s != MatSurface::Outside {
                        best = Some(Shade {
                            t,
                            surface: Surface::Mat(s),
                            point: p,
                        });
                    }
                }
            }
        }
        best
    }

    fn colour(&self, ray: &Ray, hit: Option<Shade>) -> [f32; 3] {
        let Some(hit) = hit else {
            return self.scene.background;
        };
        let (albedo, mut normal) = match hit.surface {
            Surface::Object { object, triangle } => {
                let o = &self.scene.objects[object];
                (o.albedo.at(&hit.point), o.mesh.face_normal(triangle as usize))
            }
            Surface::Mat(s) => {
                let r = if s == MatSurface::Ink { INK_REFLECTANCE } else { PAPER_REFLECTANCE };
                ([r; 3], Vec3::z())
            }
        };
        if normal.dot(&ray.direction) > 0.0 {
            normal = -normal;
        }
        let light = &self.scene.light;
        let diffuse = light.ambient + light.intensity * normal.dot(&self.light_dir).max(0.0) as f32;
        let mut spec = 0.0f32;
        if light.specular > 0.0 {
            let half = (self.light_dir - ray.direction).normalize();
            spec = light.specular * (normal.dot(&half).max(0.0) as f32).powf(light.shininess);
        }
        albedo.map(|a| (a * diffuse + spec).clamp(0.0, 1.0))
    }
}

/// Colour image, exact object coverage of pixel-centre rays, and range
/// (distance along the centre ray, `+inf` on a miss) of the nearest surface
/// including the mat.
#[derive(Debug, Clone)]
pub struct Render {
    pub image: RgbF,
    pub alpha: BinaryImage,
    pub range: Vec<f64>,
}

impl Render {
    /// Camera-axis depth of each pixel's nearest surface.
    pub fn z_depth(&self, intrinsics: &CameraIntrinsics) -> Vec<f64> {
        let w = self.image.width();
        self.range
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let px = [(i as u32 % w) as f64 + 0.5, (i as u32 / w) as f64 + 0.5];
                r * intrinsics.pixel_direction(px).z
            })
            .collect()
    }
}

const SUBSAMPLES: [(f64, f64); 4] = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)];

pub fn render_view(scene: &SyntheticScene, intrinsics: &CameraIntrinsics, pose: &Pose) -> Render {
    render_prepared(&PreparedScene::new(scene), intrinsics, pose)
}

pub fn render_prepared(prepared: &PreparedScene, intrinsics: &CameraIntrinsics, pose: &Pose) -> Render {
    let (w, h) = (intrinsics.width(), intrinsics.height());
    let rows: Vec<(Vec<[f32; 3]>, Vec<bool>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut colours = Vec::with_capacity(w as usize);
            let mut alpha = Vec::with_capacity(w as usize);
            let mut range = Vec::with_capacity(w as usize);
            for x in 0..w {
                let centre = backproject_pixel(intrinsics, pose, [x as f64 + 0.5, y as f64 + 0.5]);
                let hit = prepared.trace(&centre);
                alpha.push(matches!(hit, Some(Shade { surface: Surface::Object { .. }, .. })));
                range.push(hit.map_or(f64::INFINITY, |s| s.t));
                let mut acc = [0.0f32; 3];
                for (dx, dy) in SUBSAMPLES {
                    let ray = backproject_pixel(intrinsics, pose, [x as f64 + dx, y as f64 + dy]);
                    let c = prepared.colour(&ray, prepared.trace(&ray));
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
                colours.push(acc.map(|v| v * 0.25));
            }
            (colours, alpha, range)
        })
        .collect();
    let mut image = RgbF::new(w, h);
    let mut alpha = BinaryImage::new(w, h);
    let mut range = Vec::with_capacity((w * h) as usize);
    for (y, (c, a, r)) in rows.into_iter().enumerate() {
        for x in 0..w as usize {
            image.put_pixel(x as u32, y as u32, Rgb(c[x]));
            alpha.set(x as u32, y as u32, a[x]);
        }
        range.extend(r);
    }
    Render { image, alpha, range }
}

/// Camera-axis depth of the nearest object point seen in `render`, or of
/// the nearest surface if no object is visible.
pub fn nearest_object_depth(render: &Render, intrinsics: &CameraIntrinsics) -> f64 {
    let z = render.z_depth(intrinsics);
    let obj = z
        .iter()
        .zip(&render.alpha.data)
        .filter(|(_, &a)| a)
        .map(|(z, _)| *z)
        .fold(f64::INFINITY, f64::min);
    if obj.is_finite() {
        obj
    } else {
        z.into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Blur diameters are snapped to these levels (pixels).
const BLUR_LEVELS: [f64; 17] = [
    0.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 15.0, 19.0, 24.0, 30.0, 38.0, 48.0,
];

/// Blur-circle diameter in pixels for a point at camera depth `z` when the
/// lens is focused at `focus_z`.
pub fn blur_diameter_px(lens: &LensModel, intrinsics: &CameraIntrinsics, z: f64, focus_z: f64) -> f64 {
    if !z.is_finite() {
        return 0.0;
    }
    // Sensor pitch implied by the magnification at the focus distance.
    let pitch = lens.magnification * focus_z / intrinsics.focal_length_px;
    lens.blur_on_sensor(z - focus_z) / pitch
}

fn snap_level(d: f64) -> usize {
    if d <= 1.0 {
        return 0;
    }
    BLUR_LEVELS
        .iter()
        .enumerate()
        .skip(1)
        .min_by(|a, b| (a.1 - d).abs().total_cmp(&(b.1 - d).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// One pinhole render per rail position, defocused by layered disc blur.
/// Slice `i` is focused at camera depth `focus_start_mm + rail_positions[i]`.
pub fn render_defocus_stack(
    scene: &SyntheticScene,
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
    lens: &LensModel,
    rail_positions: &[f64],
    focus_start_mm: f64,
) -> Result<Vec<RgbF>, SimError> {
    if rail_positions.is_empty() {
        return Err(SimError::NoRailPositions);
    }
    let sharp = render_view(scene, intrinsics, pose);
    Ok(defocus_from_render(&sharp, intrinsics, lens, rail_positions, focus_start_mm))
}

pub fn defocus_from_render(
    sharp: &Render,
    intrinsics: &CameraIntrinsics,
    lens: &LensModel,
    rail_positions: &[f64],
    focus_start_mm: f64,
) -> Vec<RgbF> {
    let z = sharp.z_depth(intrinsics);
    rail_positions
        .iter()
        .map(|rail| defocus_slice(&sharp.image, &z, intrinsics, lens, focus_start_mm + rail))
        .collect()
}

fn defocus_slice(image: &RgbF, z: &[f64], intrinsics: &CameraIntrinsics, lens: &LensModel, focus_z: f64) -> RgbF {
    let (w, h) = image.dimensions();
    let n = (w * h) as usize;
    let levels: Vec<usize> = z
        .iter()
        .map(|&d| snap_level(blur_diameter_px(lens, intrinsics, d, focus_z)))
        .collect();
    // Back to front: sort distinct depths coarsely into layers by (depth bin, level).
    let finite: Vec<f64> = z.iter().copied().filter(|d| d.is_finite()).collect();
    let (zmin, zmax) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    if levels.iter().all(|&l| l == 0) {
        return image.clone();
    }
    const DEPTH_BINS: usize = 48;
    let bin = |d: f64| -> usize {
        if !d.is_finite() || zmax <= zmin {
            return DEPTH_BINS;
        }
        (((d - zmin) / (zmax - zmin)) * (DEPTH_BINS as f64 - 1.0)).round() as usize
    };
    let mut layers: std::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
    for i in 0..n {
        layers.entry((DEPTH_BINS - bin(z[i]), levels[i])).or_default().push(i);
    }
    // Premultiplied colour plus accumulated coverage.
    let mut out = vec![[0.0f32; 4]; n];
    // Keys ascend from far to near.
    for (key, members) in layers {
        let diameter = BLUR_LEVELS[key.1];
        let radius = (diameter / 2.0).ceil() as i64;
        let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for &i in &members {
            let (x, y) = ((i as u32 % w) as i64, (i as u32 / w) as i64);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        x0 = (x0 - radius).max(0);
        y0 = (y0 - radius).max(0);
        x1 = (x1 + radius).min(w as i64 - 1);
        y1 = (y1 + radius).min(h as i64 - 1);
        let bw = (x1 - x0 + 1) as usize;
        let bh = (y1 - y0 + 1) as usize;
        // Premultiplied colour and coverage of this layer inside its box.
        let mut layer = vec![[0.0f32; 4]; bw * bh];
        for &i in &members {
            let (x, y) = ((i as u32 % w) as i64 - x0, (i as u32 / w) as i64 - y0);
            let p = image.as_raw();
            let c = [p[3 * i], p[3 * i + 1], p[3 * i + 2]];
            layer[y as usize * bw + x as usize] = [c[0], c[1], c[2], 1.0];
        }
        let blurred = if diameter <= 1.0 { layer } else { disc_blur(&layer, bw, bh, diameter) };
        for by in 0..bh {
            for bx in 0..bw {
                let v = blurred[by * bw + bx];
                if v[3] <= 0.0 {
                    continue;
                }
                let i = (by + y0 as usize) * w as usize + bx + x0 as usize;
                let a = v[3].min(1.0);
                for k in 0..3 {
                    out[i][k] = v[k] + out[i][k] * (1.0 - a);
                }
                out[i][3] = a + out[i][3] * (1.0 - a);
            }
        }
    }
    let mut img = RgbF::new(w, h);
    for (i, px) in img.pixels_mut().enumerate() {
        let [r, g, b, a] = out[i];
        // Un-premultiply by accumulated coverage.
        let norm = if a > 0.0 { 1.0 / a } else { 0.0 };
        *px = Rgb([r, g, b].map(|v| (v * norm).clamp(0.0, 1.0)));
    }
    img
}

/// Normalized disc convolution of a 4-channel buffer using per-row prefix
/// sums; pixels outside the buffer count as empty.
fn disc_blur(src: &[[f32; 4]], w: usize, h: usize, diameter: f64) -> Vec<[f32; 4]> {
    let r = diameter / 2.0;
    let ri = r.floor() as i64;
    let spans: Vec<(i64, i64)> = (-ri..=ri)
        .map(|dy| {
            let half = (r * r - (dy * dy) as f64).max(0.0).sqrt().floor() as i64;
            (dy, half)
        })
        .collect();
    let area: f64 = spans.iter().map(|&(_, hw)| (2 * hw + 1) as f64).sum();
    let norm = (1.0 / area) as f32;
    let mut prefix = vec![[0.0f32; 4]; (w + 1) * h];
    for y in 0..h {
        for x in 0..w {
            let a = prefix[y * (w + 1) + x];
            let s = src[y * w + x];
            prefix[y * (w + 1) + x + 1] = [a[0] + s[0], a[1] + s[1], a[2] + s[2], a[3] + s[3]];
        }
    }
    let mut out = vec![[0.0f32; 4]; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = [0.0f32; 4];
            for &(dy, hw) in &spans {
                let yy = y as i64 + dy;
                if yy < 0 || yy >= h as i64 {
                    continue;
                }
                let lo = (x as i64 - hw).max(0) as usize;
                let hi = ((x as i64 + hw + 1).min(w as i64)) as usize;
                if lo >= hi {
                    continue;
                }
                let base = yy as usize * (w + 1);
                let (a, b) = (prefix[base + hi], prefix[base + lo]);
                for k in 0..4 {
                    acc[k] += a[k] - b[k];
                }
            }
            *o = acc.map(|v| v * norm);
        }
    });
    out
}
