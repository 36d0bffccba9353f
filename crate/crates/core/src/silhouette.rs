//! Foreground masks: background distance thresholding, mat removal,
//! morphological cleanup and manual overrides.

use std::path::{Path, PathBuf};

use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::closest_on_triangle;
use crate::fiducial::{FiducialModel, MatSurface};
use crate::geometry::{backproject_pixel, CameraIntrinsics, Pose, Vec3};
use crate::imaging::{BinaryImage, ImagingError, RgbF};

pub const DEFAULT_THRESHOLD: f32 = 30.0 / 255.0;
pub const DEFAULT_MORPHOLOGY_RADIUS: u32 = 2;
pub const DEFAULT_MIN_COMPONENT_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SilhouetteError {
    #[error("view {0}: mask has no foreground pixels")]
    EmptyMask(u32),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("override region {0:?} exceeds the {1}x{2} image")]
    RegionOutOfBounds(PixelRect, u32, u32),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Auto,
    Override,
    AutoOverride,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Auto => "auto",
            Provenance::Override => "override",
            Provenance::AutoOverride => "auto+override",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteMask {
    pub mask: BinaryImage,
    pub view_id: u32,
    pub provenance: Provenance,
}

impl SilhouetteMask {
    pub fn width(&self) -> u32 {
        self.mask.width
    }

    pub fn height(&self) -> u32 {
        self.mask.height
    }

    /// 0/255 grayscale.
    pub fn to_gray(&self) -> GrayImage {
        self.mask.to_gray()
    }

    pub fn from_override(image: &GrayImage, view_id: u32) -> Self {
        Self {
            mask: BinaryImage::from_gray(image),
            view_id,
            provenance: Provenance::Override,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, SilhouetteError> {
        let path = dir.join(mask_file_name(self.view_id));
        self.to_gray()
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(ImagingError::from)?;
        Ok(path)
    }
}

pub fn mask_file_name(view_id: u32) -> String {
    format!("view_{view_id:04}_mask.png")
}

pub fn override_file_name(view_id: u32) -> String {
    format!("view_{view_id:04}_mask_override.png")
}

/// Override mask stored beside the view's image, if any.
pub fn find_override(image_dir: &Path, view_id: u32) -> Option<PathBuf> {
    let p = image_dir.join(override_file_name(view_id));
    p.is_file().then_some(p)
}

#[derive(Debug, Clone)]
pub enum BackgroundModel {
    Uniform([f32; 3]),
    /// Per-pixel reference plate of the empty scene.
    Image(RgbF),
}

impl BackgroundModel {
    /// Median colour of the outermost pixel ring.
    pub fn estimate_uniform(image: &RgbF) -> Self {
        let (w, h) = image.dimensions();
        let mut channels: [Vec<f32>; 3] = Default::default();
        for y in 0..h {
            for x in 0..w {
                if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                    let p = image.get_pixel(x, y).0;
                    for k in 0..3 {
                        channels[k].push(p[k]);
                    }
                }
            }
        }
        let med = |v: &mut Vec<f32>| {
            v.sort_by(f32::total_cmp);
            v.get(v.len() / 2).copied().unwrap_or(0.0)
        };
        BackgroundModel::Uniform([med(&mut channels[0]), med(&mut channels[1]), med(&mut channels[2])])
    }

    fn at(&self, x: u32, y: u32) -> [f32; 3] {
        match self {
            BackgroundModel::Uniform(c) => *c,
            BackgroundModel::Image(img) => img.get_pixel(x, y).0,
        }
    }
}

/// The fiducial mat as seen in one view.
#[derive(Debug, Clone)]
pub struct MatRegion {
    pub model: FiducialModel,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub ink_rgb: [f32; 3],
    pub paper_rgb: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteOptions {
    /// Euclidean RGB distance on the unit scale.
    pub threshold: f32,
    pub morphology_radius: u32,
    pub min_component_fraction: f64,
    /// Disables open/close and component filtering.
    pub cleanup: bool,
}

impl Default for SilhouetteOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            morphology_radius: DEFAULT_MORPHOLOGY_RADIUS,
            min_component_fraction: DEFAULT_MIN_COMPONENT_FRACTION,
            cleanup: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn full(width: u32, height: u32) -> Self {
        Self { x: 0, y: 0, width, height }
    }
}

fn dist(a: &[f32; 3], b: &[f32; 3]) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn v3(c: &[f32; 3]) -> Vec3 {
    Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64)
}

/// Distance from `c` to the convex hull of up to three colours.
fn hull_distance(c: &[f32; 3], colours: &[[f32; 3]]) -> f32 {
    let p = v3(c);
    let seg = |a: Vec3, b: Vec3| {
        let d = b - a;
        let l = d.norm_squared();
        let t = if l > 0.0 { ((p - a).dot(&d) / l).clamp(0.0, 1.0) } else { 0.0 };
        (a + d * t - p).norm()
    };
    let pts: Vec<Vec3> = colours.iter().map(v3).collect();
    let best = match pts.len() {
        0 => f64::INFINITY,
        1 => (pts[0] - p).norm(),
        2 => seg(pts[0], pts[1]),
        _ => {
            let area = (pts[1] - pts[0]).cross(&(pts[2] - pts[0])).norm();
            let edges = seg(pts[0], pts[1]).min(seg(pts[1], pts[2])).min(seg(pts[0], pts[2]));
            if area > 1e-9 {
                edges.min((closest_on_triangle(&p, &[pts[0], pts[1], pts[2]]) - p).norm())
            } else {
                edges
            }
        }
    };
    best as f32
}

/// Mat surface classes on a half-pixel lattice: lattice point `(i, j)` sits
/// at image position `(i / 2, j / 2)`.
struct MatLattice {
    cols: usize,
    classes: Vec<u8>,
}

const OUT: u8 = 0;
const INK: u8 = 1;
const PAPER: u8 = 2;

impl MatLattice {
    fn new(region: &MatRegion, width: u32, height: u32) -> Self {
        let cols = 2 * width as usize + 1;
        let rows = 2 * height as usize + 1;
        let mut classes = vec![OUT; cols * rows];
        classes.par_chunks_mut(cols).enumerate().for_each(|(j, row)| {
            for (i, c) in row.iter_mut().enumerate() {
                let ray = backproject_pixel(&region.intrinsics, &region.pose, [i as f64 / 2.0, j as f64 / 2.0]);
                if ray.direction.z.abs() < 1e-12 {
                    continue;
                }
                let t = -ray.origin.z / ray.direction.z;
                if t <= 0.0 {
                    continue;
                }
                let p = ray.at(t);
                *c = match region.model.surface_at(p.x, p.y) {
                    MatSurface::Ink => INK,
                    MatSurface::Paper => PAPER,
                    MatSurface::Outside => OUT,
                };
            }
        });
        Self { cols, classes }
    }

    fn at(&self, i: usize, j: usize) -> u8 {
        self.classes[j * self.cols + i]
    }
}

/// Per-pixel foreground test before cleanup.
fn raw_foreground(image: &RgbF, background: &BackgroundModel, mat: Option<&MatRegion>, threshold: f32) -> BinaryImage {
    let (w, h) = image.dimensions();
    let lattice = mat.map(|m| MatLattice::new(m, w, h));
    let mut out = BinaryImage::new(w, h);
    out.data.par_chunks_mut(w as usize).enumerate().for_each(|(y, row)| {
        let y = y as u32;
        for x in 0..w {
            let c = image.get_pixel(x, y).0;
            let bg = background.at(x, y);
            let fg = match (&lattice, mat) {
                (Some(lat), Some(m)) => {
                    let palette = [bg, m.ink_rgb, m.paper_rgb];
                    // Exact footprint: the 3x3 lattice points inside the pixel.
                    let (i0, j0) = (2 * x as usize, 2 * y as usize);
                    let mut counts = [0u32; 3];
                    for dj in 0..3 {
                        for di in 0..3 {
                            counts[lat.at(i0 + di, j0 + dj) as usize] += 1;
                        }
                    }
                    if counts[OUT as usize] == 9 && !near_mat(lat, i0, j0, w, h) {
                        dist(&c, &bg) > threshold
                    } else {
                        let mut pred = [0.0f32; 3];
                        for (k, &n) in counts.iter().enumerate() {
                            for ch in 0..3 {
                                pred[ch] += palette[k][ch] * n as f32 / 9.0;
                            }
                        }
                        if dist(&c, &pred) <= threshold {
                            false
                        } else {
                            // Allow for pose error: any mix of the classes
                            // within one pixel of the footprint.
                            let present = classes_near(lat, i0, j0, w, h);
                            let colours: Vec<[f32; 3]> = (0..3).filter(|&k| present[k]).map(|k| palette[k]).collect();
                            hull_distance(&c, &colours) > threshold
                        }
                    }
                }
                _ => dist(&c, &bg) > threshold,
            };
            row[x as usize] = fg;
        }
    });
    out
}

fn classes_near(lat: &MatLattice, i0: usize, j0: usize, w: u32, h: u32) -> [bool; 3] {
    let mut present = [false; 3];
    let (imax, jmax) = (2 * w as usize, 2 * h as usize);
    for j in j0.saturating_sub(2)..=(j0 + 4).min(jmax) {
        for i in i0.saturating_sub(2)..=(i0 + 4).min(imax) {
            present[lat.at(i, j) as usize] = true;
        }
    }
    present
}

fn near_mat(lat: &MatLattice, i0: usize, j0: usize, w: u32, h: u32) -> bool {
    let p = classes_near(lat, i0, j0, w, h);
    p[INK as usize] || p[PAPER as usize]
}

/// Keeps the largest component and any component at least `fraction` of it.
pub fn keep_significant_components(mask: &BinaryImage, fraction: f64) -> BinaryImage {
    let comps = mask.components();
    let Some(&largest) = comps.areas.iter().max() else {
        return mask.clone();
    };
    let keep: Vec<bool> = comps.areas.iter().map(|&a| a as f64 >= fraction * largest as f64).collect();
    BinaryImage {
        width: mask.width,
        height: mask.height,
        data: comps
            .labels
            .iter()
            .map(|&l| l != u32::MAX && keep[l as usize])
            .collect(),
    }
}

pub fn extract_silhouette(
    image: &RgbF,
    background: &BackgroundModel,
    mat: Option<&MatRegion>,
    options: &SilhouetteOptions,
    view_id: u32,
) -> Result<SilhouetteMask, SilhouetteError> {
    if let BackgroundModel::Image(bg) = background {
        if bg.dimensions() != image.dimensions() {
            return Err(SilhouetteError::DimensionMismatch(bg.width(), bg.height(), image.width(), image.height()));
        }
    }
    let mut mask = raw_foreground(image, background, mat, options.threshold);
    if options.cleanup {
        mask = mask.open(options.morphology_radius).close(options.morphology_radius);
        mask = keep_significant_components(&mask, options.min_component_fraction);
    }
    if mask.count() == 0 {
        return Err(SilhouetteError::EmptyMask(view_id));
    }
    Ok(SilhouetteMask {
        mask,
        view_id,
        provenance: Provenance::Auto,
    })
}

/// Replaces the pixels inside `region` with the binarized override.
pub fn apply_override(
    auto: &SilhouetteMask,
    override_image: &GrayImage,
    region: PixelRect,
) -> Result<SilhouetteMask, SilhouetteError> {
    let (w, h) = (auto.width(), auto.height());
    if override_image.dimensions() != (w, h) {
        return Err(SilhouetteError::DimensionMismatch(override_image.width(), override_image.height(), w, h));
    }
    if region.x as u64 + region.width as u64 > w as u64 || region.y as u64 + region.height as u64 > h as u64 {
        return Err(SilhouetteError::RegionOutOfBounds(region, w, h));
    }
    let mut mask = auto.mask.clone();
    for y in region.y..region.y + region.height {
        for x in region.x..region.x + region.width {
            mask.set(x, y, override_image.get_pixel(x, y).0[0] >= 128);
        }
    }
    Ok(SilhouetteMask {
        mask,
        view_id: auto.view_id,
        provenance: Provenance::AutoOverride,
    })
}
