use scarab::geometry::{orbit_pose, CameraIntrinsics, Vec3};
use scarab::hull::{
    carve, decimate, delete_components, extract_surface, ComponentSelector, Consensus, CubeBounds, HullOctree, HullView,
    OccupancyGrid,
};
use scarab::mesh::{shapes, TexturedMesh};
use scarab::sim::{render_prepared, Albedo, Light, PreparedScene, SceneObject, SyntheticScene};

fn carve_meshes(meshes: Vec<TexturedMesh>) -> TexturedMesh {
    let objects = meshes
        .into_iter()
        .map(|mesh| SceneObject {
            mesh,
            albedo: Albedo::Uniform { colour: [0.7, 0.5, 0.3] },
        })
        .collect();
    let scene = SyntheticScene::new(objects, None, [0.35, 0.4, 0.55], Light::default()).unwrap();
    let prepared = PreparedScene::new(&scene);
    let intr = CameraIntrinsics::centred(900.0, 480, 360).unwrap();
    let views: Vec<HullView> = [15.0, 35.0, 60.0]
        .iter()
        .flat_map(|&tilt| (0..12).map(move |i| (i as f64 * 30.0, tilt)))
        .map(|(pan, tilt)| {
            let pose = orbit_pose(Vec3::new(0.0, 0.0, 8.0), 120.0, pan, tilt);
            let r = render_prepared(&prepared, &intr, &pose);
            HullView::new(&r.alpha, intr.clone(), pose).unwrap()
        })
        .collect();
    let bounds = CubeBounds::centred(Vec3::new(0.0, 0.0, 8.0), 32.0).unwrap();
    extract_surface(&carve(&views, bounds, 6, Consensus::ALL).unwrap()).unwrap()
}

#[test]
fn keep_largest_strips_pins() {
    let body = shapes::ellipsoid(Vec3::new(0.0, 0.0, 8.0), Vec3::new(7.0, 4.0, 3.0), 32, 64);
    let pins = vec![
        shapes::cylinder(Vec3::new(-11.0, 0.0, 0.0), 0.6, 14.0, 12),
        shapes::cylinder(Vec3::new(11.0, 0.0, 0.0), 0.6, 14.0, 12),
    ];
    let alone = carve_meshes(vec![body.clone()]);
    let mut all = vec![body];
    all.extend(pins);
    let with_pins = carve_meshes(all);
    assert_eq!(alone.component_count(), 1);
    assert_eq!(with_pins.component_count(), 3);
    let cleaned = delete_components(&with_pins, &ComponentSelector::KeepLargest).unwrap();
    eprintln!(
        "specimen-only {} triangles, cleaned {} triangles",
        alone.triangle_count(),
        cleaned.triangle_count()
    );
    assert_eq!(cleaned.component_count(), 1);
    assert!(cleaned.is_watertight());
    let rel = (cleaned.triangle_count() as f64 / alone.triangle_count() as f64 - 1.0).abs();
    assert!(rel <= 0.02, "{rel}");
    let rel_v = (cleaned.signed_volume() / alone.signed_volume() - 1.0).abs();
    assert!(rel_v <= 0.02, "{rel_v}");
}

#[test]
fn depth_eight_sphere_decimates_into_target_band() {
    let bounds = CubeBounds::centred(Vec3::zeros(), 24.0).unwrap();
    let mut grid = OccupancyGrid::new(256);
    for k in 0..256 {
        for j in 0..256 {
            for i in 0..256 {
                let c = bounds.cell_centre(8, [i as u32, j as u32, k as u32]);
                grid.set(i, j, k, c.norm() <= 10.0);
            }
        }
    }
    let octree = HullOctree::from_grid(bounds, 8, &grid);
    let mesh = extract_surface(&octree).unwrap();
    assert!(mesh.vertex_count() > 100_000, "{}", mesh.vertex_count());
    let out = decimate(&mesh, 100_000);
    let change = (out.signed_volume() / mesh.signed_volume() - 1.0).abs();
    eprintln!("{} -> {} vertices, volume change {change:.5}", mesh.vertex_count(), out.vertex_count());
    assert!((80_000..=130_000).contains(&out.vertex_count()));
    assert!(out.vertex_count() <= 100_000);
    assert!(change <= 0.01);
    assert!(out.is_watertight());
    assert_eq!(out.component_count(), 1);
    assert_eq!(out.euler_characteristic(), 2);
}
