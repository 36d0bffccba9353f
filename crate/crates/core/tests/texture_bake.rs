use scarab::bvh::intersect_triangle;
use scarab::geometry::{orbit_pose, project_point, CameraIntrinsics, Pose, Ray, Vec3};
use scarab::imaging::{quantize, sample_bilinear, RgbF};
use scarab::mesh::{shapes, TexturedMesh};
use scarab::sim::{render_prepared, Albedo, Light, PreparedScene, SceneObject, SyntheticScene};
use scarab::texture::{bake_atlas, select_views, BakeOptions, SourceView, TextureAtlas, SENTINEL_COLOUR};

struct Rig {
    intrinsics: CameraIntrinsics,
    poses: Vec<Pose>,
    images: Vec<RgbF>,
}

impl Rig {
    fn views(&self) -> Vec<SourceView<'_>> {
        self.poses
            .iter()
            .zip(&self.images)
            .map(|(pose, image)| SourceView {
                image,
                intrinsics: &self.intrinsics,
                pose,
            })
            .collect()
    }
}

fn flat_light() -> Light {
    Light {
        intensity: 0.0,
        ambient: 1.0,
        ..Light::default()
    }
}

fn shoot(mesh: &TexturedMesh, albedo: Albedo, target: Vec3) -> Rig {
    let scene = SyntheticScene::new(
        vec![SceneObject { mesh: mesh.clone(), albedo }],
        None,
        [0.35, 0.4, 0.55],
        flat_light(),
    )
    .unwrap();
    let prepared = PreparedScene::new(&scene);
    let intrinsics = CameraIntrinsics::centred(700.0, 320, 240).unwrap();
    let poses: Vec<Pose> = [-60.0, -20.0, 20.0, 60.0]
        .iter()
        .flat_map(|&tilt| (0..8).map(move |i| orbit_pose(target, 100.0, i as f64 * 45.0 + tilt, tilt)))
        .collect();
    let images = poses.iter().map(|p| render_prepared(&prepared, &intrinsics, p).image).collect();
    Rig {
        intrinsics,
        poses,
        images,
    }
}

fn small_atlas() -> BakeOptions {
    BakeOptions {
        megapixels: 1.0,
        ..BakeOptions::default()
    }
}

fn barycentric(t: &[[f64; 2]; 3], p: [f64; 2]) -> [f64; 3] {
    let d = (t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]);
    let b1 = ((p[0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (p[1] - t[0][1])) / d;
    let b2 = ((t[1][0] - t[0][0]) * (p[1] - t[0][1]) - (p[0] - t[0][0]) * (t[1][1] - t[0][1])) / d;
    [1.0 - b1 - b2, b1, b2]
}

/// Textured texels whose 3x3 neighbourhood is covered by faces of the same
/// chart (charts sit at least a gutter apart).
fn interior_texels(atlas: &TextureAtlas) -> Vec<(u32, u32, u32)> {
    let mut out = Vec::new();
    for y in 1..atlas.side - 1 {
        for x in 1..atlas.side - 1 {
            let Some(f) = atlas.face_at(x, y) else { continue };
            if atlas.face_view[f as usize].is_none() {
                continue;
            }
            let same = (-1i32..=1).all(|dy| {
                (-1i32..=1).all(|dx| atlas.face_at((x as i32 + dx) as u32, (y as i32 + dy) as u32).is_some())
            });
            if same {
                out.push((x, y, f));
            }
        }
    }
    out
}

#[test]
fn uniform_red_specimen_bakes_to_red() {
    let mesh = shapes::sphere(Vec3::new(0.0, 0.0, 10.0), 8.0, 24, 48);
    let red = [0.8, 0.05, 0.05];
    let rig = shoot(&mesh, Albedo::Uniform { colour: red }, Vec3::new(0.0, 0.0, 10.0));
    let views = rig.views();
    let face_view = select_views(&mesh, &views);
    assert!(face_view.iter().all(|v| v.is_some()));
    let atlas = bake_atlas(&mesh, &views, &face_view, &small_atlas()).unwrap();
    let expected = red.map(quantize);
    let mut checked = 0;
    for y in 0..atlas.side {
        for x in 0..atlas.side {
            if atlas.face_at(x, y).is_none() {
                continue;
            }
            let p = atlas.image.get_pixel(x, y).0;
            assert_ne!(p, SENTINEL_COLOUR);
            for c in 0..3 {
                assert!((p[c] as i32 - expected[c] as i32).abs() <= 2, "texel {x},{y}: {p:?}");
            }
            checked += 1;
        }
    }
    assert!(checked > 10_000, "{checked}");
}

#[test]
fn checker_sphere_back_projects_onto_sources() {
    let centre = Vec3::new(0.0, 0.0, 10.0);
    let mesh = shapes::sphere(centre, 8.0, 32, 64);
    let albedo = Albedo::Checker { a: [0.9, 0.85, 0.8], b: [0.1, 0.15, 0.3], size_mm: 2.0 };
    let rig = shoot(&mesh, albedo, centre);
    let views = rig.views();
    let face_view = select_views(&mesh, &views);
    let atlas = bake_atlas(&mesh, &views, &face_view, &small_atlas()).unwrap();
    let texels = interior_texels(&atlas);
    assert!(texels.len() > 10_000, "{}", texels.len());
    let mut total = 0.0;
    for &(x, y, f) in &texels {
        let uv_tri = atlas.uvs[f as usize].map(|uv| atlas.uv_to_texel(uv));
        let b = barycentric(&uv_tri, [x as f64 + 0.5, y as f64 + 0.5]);
        let c = mesh.corners(f as usize);
        let p = c[0] * b[0] + c[1] * b[1] + c[2] * b[2];
        let v = &views[face_view[f as usize].unwrap() as usize];
        let px = project_point(v.intrinsics, v.pose, &p).unwrap();
        let want = sample_bilinear(v.image, px[0], px[1]).map(quantize);
        let got = atlas.image.get_pixel(x, y).0;
        total += (0..3).map(|k| (got[k] as f64 - want[k] as f64).abs()).sum::<f64>() / 3.0;
    }
    let mean = total / texels.len() as f64;
    eprintln!("back-projection mean error {:.4}/255 over {} texels", mean, texels.len());
    assert!(mean <= 3.0);
}

#[test]
fn baking_is_deterministic_across_thread_counts() {
    let centre = Vec3::new(0.0, 0.0, 10.0);
    let mesh = shapes::ellipsoid(centre, Vec3::new(8.0, 6.0, 5.0), 24, 48);
    let albedo = Albedo::Waves { a: [0.9, 0.6, 0.2], b: [0.2, 0.3, 0.7], period_mm: 3.0 };
    let rig = shoot(&mesh, albedo, centre);
    let bake = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let views = rig.views();
            let fv = select_views(&mesh, &views);
            let atlas = bake_atlas(&mesh, &views, &fv, &small_atlas()).unwrap();
            (fv, atlas.image.into_raw(), atlas.uvs)
        })
    };
    let one = bake(1);
    assert_eq!(one, bake(4));
    assert_eq!(one, bake(8));
}

#[test]
fn selected_views_are_unoccluded_in_a_wing_pocket() {
    let centre = Vec3::new(0.0, 0.0, 8.0);
    // Body with a wing plate hovering just above it.
    let body = shapes::ellipsoid(centre, Vec3::new(6.0, 3.0, 2.5), 16, 32);
    let wing = shapes::cuboid(Vec3::new(-2.0, -7.0, 11.0), Vec3::new(4.0, 7.0, 11.4));
    let mesh = body.merged(&wing);
    let rig = shoot(&mesh, Albedo::Uniform { colour: [0.5; 3] }, centre);
    let views = rig.views();
    let face_view = select_views(&mesh, &views);
    let scale = mesh.bounds().extent().norm();
    let mut checked = 0;
    for (f, v) in face_view.iter().enumerate() {
        let Some(v) = v else { continue };
        let from = mesh.face_centroid(f);
        let to_cam = views[*v as usize].pose.camera_centre() - from;
        let ray = Ray::new(from, to_cam);
        let blocked = (0..mesh.triangle_count()).any(|t| {
            t != f && intersect_triangle(&ray, &mesh.corners(t)).is_some_and(|h| h.0 > 1e-7 * scale && h.0 < to_cam.norm())
        });
        assert!(!blocked, "face {f} sees view {v} through the mesh");
        checked += 1;
    }
    let untextured = face_view.iter().filter(|v| v.is_none()).count();
    eprintln!("{checked} faces verified, {untextured} untextured");
    assert!(checked > 0);
}
