//! Per-face view selection and texture atlas baking.

use std::collections::HashMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use thiserror::Error;

use crate::bvh::Bvh;
use crate::geometry::{project_point, CameraIntrinsics, Pose, Ray};
use crate::hull::PhotoView;
use crate::imaging::{quantize, sample_bilinear, ImagingError, RgbF};
use crate::mesh::{TexturedMesh, UnionFind};

/// A calibrated source photograph.
pub type SourceView<'a> = PhotoView<'a>;

/// Anything with a calibrated camera.
pub trait ViewCamera: Sync {
    fn intrinsics(&self) -> &CameraIntrinsics;
    fn pose(&self) -> &Pose;
}

impl ViewCamera for PhotoView<'_> {
    fn intrinsics(&self) -> &CameraIntrinsics {
        self.intrinsics
    }
    fn pose(&self) -> &Pose {
        self.pose
    }
}

impl ViewCamera for (CameraIntrinsics, Pose) {
    fn intrinsics(&self) -> &CameraIntrinsics {
        &self.0
    }
    fn pose(&self) -> &Pose {
        &self.1
    }
}

pub const DEFAULT_ATLAS_MEGAPIXELS: f64 = 16.0;
pub const MIN_GUTTER: u32 = 2;
pub const SENTINEL_COLOUR: [u8; 3] = [255, 0, 255];

/// Dot products closer than this count as a tie.
const TIE_EPS: f64 = 1e-12;
/// Side of the square chart given to a face no view sees.
const SENTINEL_CHART: u32 = 3;
const MAX_ATLAS_SIDE: u32 = 16384;
const NO_FACE: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum TextureError {
    #[error("atlas resolution {0} MP is out of range")]
    InvalidResolution(f64),
    #[error("gutter of {0} texels is below the minimum of 2")]
    InvalidGutter(u32),
    #[error("{charts} charts do not fit a {side}x{side} atlas")]
    PackingOverflow { charts: usize, side: u32 },
    #[error("face view list has {got} entries for {faces} faces")]
    FaceViewMismatch { got: usize, faces: usize },
    #[error("face {face} refers to unknown view {view}")]
    UnknownView { face: usize, view: u32 },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Square power-of-two side closest to the requested megapixels.
pub fn atlas_side_for(megapixels: f64) -> Result<u32, TextureError> {
    if !(megapixels > 0.0) || !megapixels.is_finite() {
        return Err(TextureError::InvalidResolution(megapixels));
    }
    let exp = (megapixels * 1e6).sqrt().log2().round().max(0.0);
    if exp > MAX_ATLAS_SIDE.ilog2() as f64 {
        return Err(TextureError::InvalidResolution(megapixels));
    }
    Ok(1 << exp as u32)
}

/// Picks, for every face, the unoccluded view whose direction is closest to
/// the face normal. `None` marks faces no view sees.
pub fn select_views<C: ViewCamera>(mesh: &TexturedMesh, views: &[C]) -> Vec<Option<u32>> {
    let bvh = Bvh::build(mesh);
    let scale = mesh.bounds().extent().norm().max(1e-9);
    let t_min = 1e-7 * scale;
    (0..mesh.triangle_count())
        .into_par_iter()
        .map(|f| {
            let normal = mesh.face_normal(f);
            let centroid = mesh.face_centroid(f);
            let corners = mesh.corners(f);
            let mut candidates: Vec<(f64, u32)> = views
                .iter()
                .enumerate()
                .filter_map(|(i, v)| {
                    let to_cam = v.pose().camera_centre() - centroid;
                    let d = normal.dot(&to_cam.normalize());
                    let in_frame = corners
                        .iter()
                        .all(|c| project_point(v.intrinsics(), v.pose(), c).is_ok_and(|px| v.intrinsics().contains(px)));
                    (d > 0.0 && in_frame).then_some((d, i as u32))
                })
                .collect();
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let visible = |i: u32| {
                let to_cam = views[i as usize].pose().camera_centre() - centroid;
                !bvh.occluded(&Ray::new(centroid, to_cam), t_min, to_cam.norm())
            };
            let mut best: Option<(f64, u32)> = None;
            for &(d, i) in &candidates {
                match best {
                    None => {
                        if visible(i) {
                            best = Some((d, i));
                        }
                    }
                    Some((bd, bi)) => {
                        if d < bd - TIE_EPS {
                            break;
                        }
                        if i < bi && visible(i) {
                            best = Some((bd, i));
                        }
                    }
                }
            }
            best.map(|b| b.1)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BakeOptions {
    pub megapixels: f64,
    pub gutter: u32,
    /// Upper bound on atlas texels per source pixel.
    pub max_scale: f64,
    /// Below this texel density packing gives up.
    pub min_scale: f64,
}

impl Default for BakeOptions {
    fn default() -> Self {
        Self {
            megapixels: DEFAULT_ATLAS_MEGAPIXELS,
            gutter: MIN_GUTTER,
            max_scale: 1.0,
            min_scale: 0.02,
        }
    }
}

/// A connected group of faces sharing a source view, laid out in the atlas
/// as a scaled copy of its image footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub view: Option<u32>,
    pub faces: Vec<u32>,
    /// Top-left texel of the chart rectangle, gutter included.
    pub origin: [u32; 2],
    pub size: [u32; 2],
    /// Image-space corner the chart content starts from.
    pub image_min: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct TextureAtlas {
    pub image: RgbImage,
    pub side: u32,
    /// Atlas texels per source pixel.
    pub scale: f64,
    pub gutter: u32,
    pub charts: Vec<Chart>,
    pub face_view: Vec<Option<u32>>,
    /// Per-face corner UVs, `v` pointing up.
    pub uvs: Vec<[[f64; 2]; 3]>,
    /// Face whose triangle covers each texel, or `u32::MAX`.
    pub texel_face: Vec<u32>,
}

impl TextureAtlas {
    pub fn megapixels(&self) -> f64 {
        (self.side as f64).powi(2) / 1e6
    }

    pub fn untextured_faces(&self) -> usize {
        self.face_view.iter().filter(|v| v.is_none()).count()
    }

    /// Face covering texel `(x, y)`, if any.
    pub fn face_at(&self, x: u32, y: u32) -> Option<u32> {
        let f = self.texel_face[(y * self.side + x) as usize];
        (f != NO_FACE).then_some(f)
    }

    /// Atlas texel coordinates of a UV.
    pub fn uv_to_texel(&self, uv: [f64; 2]) -> [f64; 2] {
        [uv[0] * self.side as f64, (1.0 - uv[1]) * self.side as f64]
    }

    /// Copies UVs and the atlas file name onto `mesh`.
    pub fn apply(&self, mesh: &mut TexturedMesh, atlas_file: &str) {
        mesh.uvs = Some(self.uvs.clone());
        mesh.atlas = Some(atlas_file.to_string());
    }

    pub fn save_png(&self, path: &Path) -> Result<(), TextureError> {
        self.image.save(path).map_err(ImagingError::from)?;
        Ok(())
    }
}

fn build_charts(mesh: &TexturedMesh, face_view: &[Option<u32>]) -> Vec<Vec<u32>> {
    let n = mesh.triangle_count();
    let mut uf = UnionFind::new(n);
    let mut edges: HashMap<(u32, u32), u32> = HashMap::new();
    for (f, tri) in mesh.triangles.iter().enumerate() {
        if face_view[f].is_none() {
            continue;
        }
        for e in 0..3 {
            let (a, b) = (tri[e], tri[(e + 1) % 3]);
            let key = (a.min(b), a.max(b));
            match edges.get(&key) {
                Some(&g) if face_view[g as usize] == face_view[f] => uf.union(f, g as usize),
                Some(_) => {}
                None => {
                    edges.insert(key, f as u32);
                }
            }
        }
    }
    let mut index: HashMap<usize, usize> = HashMap::new();
    let mut charts: Vec<Vec<u32>> = Vec::new();
    for f in 0..n {
        let root = if face_view[f].is_some() { uf.find(f) } else { usize::MAX - f };
        let id = *index.entry(root).or_insert_with(|| {
            charts.push(Vec::new());
            charts.len() - 1
        });
        charts[id].push(f as u32);
    }
    charts
}

/// Shelf packing by descending height; returns rectangle origins.
fn shelf_pack(sizes: &[[u32; 2]], side: u32) -> Option<Vec<[u32; 2]>> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b][1].cmp(&sizes[a][1]).then(a.cmp(&b)));
    let mut out = vec![[0u32; 2]; sizes.len()];
    let (mut x, mut y, mut shelf) = (0u32, 0u32, 0u32);
    for i in order {
        let [w, h] = sizes[i];
        if w > side {
            return None;
        }
        if x + w > side {
            y += shelf;
            x = 0;
            shelf = 0;
        }
        if y + h > side {
            return None;
        }
        out[i] = [x, y];
        x += w;
        shelf = shelf.max(h);
    }
    Some(out)
}

struct Footprint {
    min: [f64; 2],
    extent: [f64; 2],
}

fn chart_size(fp: &Option<Footprint>, scale: f64, gutter: u32) -> [u32; 2] {
    match fp {
        Some(fp) => fp.extent.map(|e| (e * scale).ceil() as u32 + 1 + 2 * gutter),
        None => [SENTINEL_CHART + 2 * gutter; 2],
    }
}

/// Bakes one chart per (view, connected patch) into a square atlas.
pub fn bake_atlas(
    mesh: &TexturedMesh,
    views: &[SourceView],
    face_view: &[Option<u32>],
    options: &BakeOptions,
) -> Result<TextureAtlas, TextureError> {
    bake_atlas_with(mesh, views, face_view, options, |v| Ok(views[v as usize].image.clone()))
}

/// Like [`bake_atlas`] but fetches source images on demand, one view at a
/// time in ascending view order.
pub fn bake_atlas_with<C: ViewCamera, E: From<TextureError>>(
    mesh: &TexturedMesh,
    views: &[C],
    face_view: &[Option<u32>],
    options: &BakeOptions,
    load: impl Fn(u32) -> Result<RgbF, E>,
) -> Result<TextureAtlas, E> {
    let side = atlas_side_for(options.megapixels).map_err(E::from)?;
    if options.gutter < MIN_GUTTER {
        return Err(TextureError::InvalidGutter(options.gutter).into());
    }
    let faces = mesh.triangle_count();
    if face_view.len() != faces {
        return Err(TextureError::FaceViewMismatch { got: face_view.len(), faces }.into());
    }
    for (f, v) in face_view.iter().enumerate() {
        if let Some(v) = *v {
            if v as usize >= views.len() {
                return Err(TextureError::UnknownView { face: f, view: v }.into());
            }
        }
    }
    let g = options.gutter;
    let groups = build_charts(mesh, face_view);

    // Image-space corner positions of every textured face.
    let projected: Vec<[[f64; 2]; 3]> = (0..faces)
        .into_par_iter()
        .map(|f| match face_view[f] {
            Some(v) => {
                let view = &views[v as usize];
                mesh.corners(f)
                    .map(|c| project_point(view.intrinsics(), view.pose(), &c).unwrap_or([f64::NAN; 2]))
            }
            None => [[0.0; 2]; 3],
        })
        .collect();
    let footprints: Vec<Option<Footprint>> = groups
        .iter()
        .map(|group| {
            face_view[group[0] as usize]?;
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for &f in group {
                for p in &projected[f as usize] {
                    for a in 0..2 {
                        lo[a] = lo[a].min(p[a]);
                        hi[a] = hi[a].max(p[a]);
                    }
                }
            }
            Some(Footprint { min: lo, extent: [hi[0] - lo[0], hi[1] - lo[1]] })
        })
        .collect();

    let try_scale = |s: f64| {
        let sizes: Vec<[u32; 2]> = footprints.iter().map(|fp| chart_size(fp, s, g)).collect();
        shelf_pack(&sizes, side).map(|origins| (sizes, origins))
    };
    let (scale, (sizes, origins)) = match try_scale(options.max_scale) {
        Some(p) => (options.max_scale, p),
        None => {
            let Some(fallback) = try_scale(options.min_scale) else {
                return Err(TextureError::PackingOverflow { charts: groups.len(), side }.into());
            };
            let (mut lo, mut hi, mut best) = (options.min_scale, options.max_scale, fallback);
            for _ in 0..24 {
                let mid = 0.5 * (lo + hi);
                match try_scale(mid) {
                    Some(p) => {
                        lo = mid;
                        best = p;
                    }
                    None => hi = mid,
                }
            }
            (lo, best)
        }
    };

    let charts: Vec<Chart> = groups
        .into_iter()
        .enumerate()
        .map(|(i, faces)| Chart {
            view: face_view[faces[0] as usize],
            faces,
            origin: origins[i],
            size: sizes[i],
            image_min: footprints[i].as_ref().map_or([0.0; 2], |fp| fp.min),
        })
        .collect();

    // Atlas texel positions of every face corner.
    let mut corners_px = vec![[[0.0f64; 2]; 3]; faces];
    for chart in &charts {
        let base = [(chart.origin[0] + g) as f64, (chart.origin[1] + g) as f64];
        for (k, &f) in chart.faces.iter().enumerate() {
            corners_px[f as usize] = match chart.view {
                Some(_) => projected[f as usize].map(|p| {
                    [base[0] + (p[0] - chart.image_min[0]) * scale, base[1] + (p[1] - chart.image_min[1]) * scale]
                }),
                None => {
                    debug_assert_eq!(k, 0);
                    let s = SENTINEL_CHART as f64;
                    [base, [base[0] + s, base[1]], [base[0], base[1] + s]]
                }
            };
        }
    }

    let mut by_view: Vec<(Option<u32>, usize)> = charts.iter().enumerate().map(|(i, c)| (c.view, i)).collect();
    by_view.sort();
    let mut tiles: Vec<(Vec<[f32; 3]>, Vec<u32>)> = vec![Default::default(); charts.len()];
    for run in by_view.chunk_by(|a, b| a.0 == b.0) {
        let image = match run[0].0 {
            Some(v) => Some(load(v)?),
            None => None,
        };
        let baked: Vec<_> = run
            .par_iter()
            .map(|&(_, i)| bake_chart(&charts[i], image.as_ref(), &corners_px, scale, g))
            .collect();
        for (&(_, i), tile) in run.iter().zip(baked) {
            tiles[i] = tile;
        }
    }

    let mut image = RgbImage::new(side, side);
    let mut texel_face = vec![NO_FACE; (side as usize) * (side as usize)];
    for (chart, (colours, owners)) in charts.iter().zip(tiles) {
        let [w, h] = chart.size;
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                let (ax, ay) = (chart.origin[0] + x, chart.origin[1] + y);
                let c = colours[i];
                image.put_pixel(ax, ay, Rgb([quantize(c[0]), quantize(c[1]), quantize(c[2])]));
                texel_face[(ay * side + ax) as usize] = owners[i];
            }
        }
        if chart.view.is_none() {
            for y in 0..h {
                for x in 0..w {
                    image.put_pixel(chart.origin[0] + x, chart.origin[1] + y, Rgb(SENTINEL_COLOUR));
                }
            }
        }
    }
    let n = side as f64;
    let uvs = corners_px.iter().map(|c| c.map(|p| [p[0] / n, 1.0 - p[1] / n])).collect();
    Ok(TextureAtlas {
        image,
        side,
        scale,
        gutter: g,
        charts,
        face_view: face_view.to_vec(),
        uvs,
        texel_face,
    })
}

fn edge(a: &[f64; 2], b: &[f64; 2], p: &[f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Rasterizes a chart into a local tile; returns colours and owning faces.
fn bake_chart(
    chart: &Chart,
    image: Option<&RgbF>,
    corners_px: &[[[f64; 2]; 3]],
    scale: f64,
    gutter: u32,
) -> (Vec<[f32; 3]>, Vec<u32>) {
    let [w, h] = chart.size;
    let len = (w * h) as usize;
    let mut colour = vec![[0.0f32; 3]; len];
    let mut owner = vec![NO_FACE; len];
    let (ox, oy) = (chart.origin[0] as f64, chart.origin[1] as f64);
    for &f in &chart.faces {
        let tri = corners_px[f as usize].map(|p| [p[0] - ox, p[1] - oy]);
        let area = edge(&tri[0], &tri[1], &tri[2]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let x0 = tri.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
        let y0 = tri.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
        let x1 = (tri.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max).ceil() as u32).min(w);
        let y1 = (tri.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max).ceil() as u32).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let i = (y * w + x) as usize;
                if owner[i] != NO_FACE {
                    continue;
                }
                let c = [x as f64 + 0.5, y as f64 + 0.5];
                let inside = (0..3).all(|k| edge(&tri[k], &tri[(k + 1) % 3], &c) * area.signum() >= -1e-9 * area.abs());
                if !inside {
                    continue;
                }
                owner[i] = f;
                if let Some(img) = image {
                    let px = chart.image_min[0] + (c[0] - gutter as f64) / scale;
                    let py = chart.image_min[1] + (c[1] - gutter as f64) / scale;
                    colour[i] = sample_bilinear(img, px, py);
                }
            }
        }
    }
    // Bleed covered texels outward so filtering across chart edges stays clean.
    let mut filled: Vec<bool> = owner.iter().map(|&o| o != NO_FACE).collect();
    for _ in 0..gutter {
        let snapshot = filled.clone();
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let i = (y * w as i64 + x) as usize;
                if snapshot[i] {
                    continue;
                }
                for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = (ny * w as i64 + nx) as usize;
                    if snapshot[j] {
                        colour[i] = colour[j];
                        filled[i] = true;
                        break;
                    }
                }
            }
        }
    }
    (colour, owner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{orbit_pose, CameraIntrinsics, Pose, Vec3};
    use crate::imaging::RgbF;
    use crate::mesh::shapes;

    #[test]
    fn atlas_sides() {
        assert_eq!(atlas_side_for(16.0).unwrap(), 4096);
        assert_eq!(atlas_side_for(4.0).unwrap(), 2048);
        assert_eq!(atlas_side_for(1.0).unwrap(), 1024);
        assert!(atlas_side_for(0.0).is_err());
        assert!(atlas_side_for(f64::NAN).is_err());
        assert!(atlas_side_for(1000.0).is_err());
    }

    #[test]
    fn shelf_packing_stays_in_bounds_and_disjoint() {
        let sizes = vec![[10, 5], [3, 9], [7, 7], [16, 2], [5, 5], [9, 1]];
        let origins = shelf_pack(&sizes, 20).unwrap();
        for (i, (a, sa)) in origins.iter().zip(&sizes).enumerate() {
            assert!(a[0] + sa[0] <= 20 && a[1] + sa[1] <= 20);
            for (b, sb) in origins.iter().zip(&sizes).skip(i + 1) {
                let apart = a[0] + sa[0] <= b[0] || b[0] + sb[0] <= a[0] || a[1] + sa[1] <= b[1] || b[1] + sb[1] <= a[1];
                assert!(apart);
            }
        }
        assert!(shelf_pack(&[[17, 1]], 16).is_none());
        assert!(shelf_pack(&[[16, 16], [1, 1]], 16).is_none());
    }

    fn single_triangle(normal_towards: Vec3) -> TexturedMesh {
        // Unit triangle in the plane through the origin facing `normal_towards`.
        let n = normal_towards.normalize();
        let a = n.cross(&Vec3::x()).try_normalize(1e-9).unwrap_or_else(|| n.cross(&Vec3::y()).normalize());
        let b = n.cross(&a);
        TexturedMesh::new(vec![Vec3::zeros(), a, b], vec![[0, 1, 2]])
    }

    fn blank(w: u32, h: u32) -> RgbF {
        RgbF::new(w, h)
    }

    #[test]
    fn picks_the_view_facing_the_normal() {
        let intr = CameraIntrinsics::centred(200.0, 200, 200).unwrap();
        let img = blank(200, 200);
        let poses: Vec<Pose> = (0..12).map(|i| orbit_pose(Vec3::zeros(), 50.0, i as f64 * 30.0, 20.0)).collect();
        let views: Vec<SourceView> = poses.iter().map(|p| SourceView { image: &img, intrinsics: &intr, pose: p }).collect();
        let mesh = single_triangle(poses[7].camera_centre());
        let centroid = mesh.face_centroid(0);
        let mesh = mesh.translated(-centroid);
        assert_eq!(select_views(&mesh, &views), vec![Some(7)]);
    }

    #[test]
    fn symmetric_views_tie_to_lowest_id() {
        let intr = CameraIntrinsics::centred(200.0, 200, 200).unwrap();
        let img = blank(200, 200);
        let poses = [orbit_pose(Vec3::zeros(), 50.0, 30.0, 0.0), orbit_pose(Vec3::zeros(), 50.0, -30.0, 0.0)];
        let mesh = single_triangle(Vec3::x());
        let centroid = mesh.face_centroid(0);
        let mesh = mesh.translated(-centroid);
        let views: Vec<SourceView> = poses.iter().map(|p| SourceView { image: &img, intrinsics: &intr, pose: p }).collect();
        assert_eq!(select_views(&mesh, &views), vec![Some(0)]);
        let reversed: Vec<SourceView> = views.iter().rev().copied().collect();
        assert_eq!(select_views(&mesh, &reversed), vec![Some(0)]);
    }

    #[test]
    fn occluded_and_back_facing_faces_are_untextured() {
        let intr = CameraIntrinsics::centred(200.0, 200, 200).unwrap();
        let img = blank(200, 200);
        let pose = orbit_pose(Vec3::zeros(), 50.0, 0.0, 0.0);
        let views = [SourceView { image: &img, intrinsics: &intr, pose: &pose }];
        // Facing the camera, but a larger plate sits in between.
        let face = single_triangle(Vec3::x()).translated(Vec3::new(0.0, -0.3, -0.3));
        let plate = shapes::cuboid(Vec3::new(5.0, -3.0, -3.0), Vec3::new(6.0, 3.0, 3.0));
        let mesh = face.clone().merged(&plate);
        assert_eq!(select_views(&mesh, &views)[0], None);
        assert_eq!(select_views(&face, &views)[0], Some(0));
        let back = single_triangle(-Vec3::x());
        assert_eq!(select_views(&back, &views)[0], None);
    }

    #[test]
    fn untextured_faces_get_sentinel_charts() {
        let intr = CameraIntrinsics::centred(200.0, 200, 200).unwrap();
        let img = blank(200, 200);
        let pose = orbit_pose(Vec3::zeros(), 50.0, 0.0, 0.0);
        let views = [SourceView { image: &img, intrinsics: &intr, pose: &pose }];
        let mesh = shapes::cuboid(Vec3::repeat(-2.0), Vec3::repeat(2.0));
        let fv = select_views(&mesh, &views);
        assert_eq!(fv.iter().filter(|v| v.is_some()).count(), 2);
        let opts = BakeOptions { megapixels: 0.25, ..Default::default() };
        let atlas = bake_atlas(&mesh, &views, &fv, &opts).unwrap();
        assert_eq!(atlas.side, 512);
        assert_eq!(atlas.charts.len(), 11);
        assert_eq!(atlas.untextured_faces(), 10);
        for chart in atlas.charts.iter().filter(|c| c.view.is_none()) {
            let p = atlas.image.get_pixel(chart.origin[0] + 2, chart.origin[1] + 2).0;
            assert_eq!(p, SENTINEL_COLOUR);
        }
        let mut m = mesh.clone();
        atlas.apply(&mut m, "atlas.png");
        assert_eq!(m.uvs.as_ref().unwrap().len(), 12);
    }

    #[test]
    fn overflow_is_reported() {
        let intr = CameraIntrinsics::centred(200.0, 200, 200).unwrap();
        let img = blank(200, 200);
        let pose = orbit_pose(Vec3::zeros(), 50.0, 0.0, 0.0);
        let views = [SourceView { image: &img, intrinsics: &intr, pose: &pose }];
        let mesh = shapes::sphere(Vec3::zeros(), 3.0, 30, 60);
        let fv = vec![None; mesh.triangle_count()];
        let opts = BakeOptions { megapixels: 1e-4, ..Default::default() };
        assert!(matches!(bake_atlas(&mesh, &views, &fv, &opts), Err(TextureError::PackingOverflow { .. })));
        let bad = vec![Some(3); mesh.triangle_count()];
        assert!(matches!(bake_atlas(&mesh, &views, &bad, &BakeOptions::default()), Err(TextureError::UnknownView { .. })));
    }
}
