mod common;

use std::fs;

use common::*;
use scarab::export::{read_stl, ProjectManifest};

fn count_files(dir: &std::path::Path, suffix: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(suffix))
        .count()
}

#[test]
fn four_view_schedule_gives_four_images_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let proj = simulate_project(dir.path(), &ellipsoid_scene(&SceneParams::small(90.0, &[30.0])));
    assert_eq!(count_files(&proj.join("images"), ".png"), 4);
    assert_eq!(count_files(&proj.join("poses"), ".pose.toml"), 4);
    let (manifest, schedule) = ProjectManifest::load(&proj).unwrap();
    assert_eq!(manifest.views.len(), 4);
    assert_eq!(schedule.image_count(), 4);
}

#[test]
fn macro_plan_of_144_poses_by_31_slices_has_4464_images() {
    let dir = tempfile::tempdir().unwrap();
    let sched = dir.path().join("macro.txt");
    let out = scarab(&["plan", "--mode", "macro", "--slices", "31", "-o", path_arg(&sched)]);
    assert!(out.status.success());
    let line = String::from_utf8_lossy(&out.stdout).to_string();
    assert_eq!(field(&line, "poses").as_deref(), Some("144"));
    assert_eq!(field(&line, "images").as_deref(), Some("4464"));
    assert_eq!(field(&line, "rail_step_mm").as_deref(), Some("0.2520"));

    // Simulate the whole schedule at thumbnail size.
    let scene = r#"specimen = "block"
mat_diameter_mm = 40.0
distance_mm = 200.0
[camera]
focal_length_px = 300.0
width = 64
height = 48
[lens]
magnification = 2.0
f_number = 8.0
circle_of_confusion = 0.03
[[objects]]
shape = { kind = "cuboid", min = [-4.0, -3.0, 1.0], max = [4.0, 3.0, 8.5] }
albedo = { kind = "checker", a = [0.9, 0.7, 0.3], b = [0.6, 0.4, 0.2], size_mm = 1.0 }
"#;
    let scene_path = dir.path().join("scene.toml");
    fs::write(&scene_path, scene).unwrap();
    let proj = dir.path().join("proj");
    let out = scarab(&["simulate", path_arg(&scene_path), path_arg(&proj), "--schedule", path_arg(&sched)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(count_files(&proj.join("images"), ".png"), 4464);
    let (manifest, schedule) = ProjectManifest::load(&proj).unwrap();
    assert_eq!(manifest.views.len(), 4464);
    assert_eq!(schedule.pose_groups().len(), 144);
}

#[test]
fn rerun_hits_the_cache_and_edits_rerun_only_dependent_stages() {
    let dir = tempfile::tempdir().unwrap();
    let proj = simulate_project(dir.path(), &ellipsoid_scene(&SceneParams::small(45.0, &[15.0, 35.0])));
    let p = path_arg(&proj);
    let common = ["--depth", "5", "--target-vertices", "5000", "--atlas-mp", "0.25"];
    let run = |extra: &[&str]| {
        let mut args = vec!["run", p];
        args.extend_from_slice(&common);
        args.extend_from_slice(extra);
        scarab(&args)
    };

    let first = run(&[]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let s = stage_statuses(&first);
    assert_eq!(s["stack"], "skipped");
    for stage in ["pose", "mask", "carve", "mesh", "texture", "export"] {
        assert_eq!(s[stage], "ran", "{stage}");
    }
    let stl = fs::read(proj.join("export/model.stl")).unwrap();
    assert!(read_stl(&stl).unwrap().to_mesh().is_watertight());

    let second = run(&[]);
    let s = stage_statuses(&second);
    for stage in ["pose", "mask", "carve", "mesh", "texture", "export"] {
        assert_eq!(s[stage], "cache-hit", "{stage}");
    }

    // A carve setting leaves pose and mask cached.
    let deeper = scarab(&["run", p, "--depth", "6", "--target-vertices", "5000", "--atlas-mp", "0.25"]);
    let s = stage_statuses(&deeper);
    assert_eq!((s["pose"].as_str(), s["mask"].as_str()), ("cache-hit", "cache-hit"));
    for stage in ["carve", "mesh", "texture", "export"] {
        assert_eq!(s[stage], "ran", "{stage}");
    }

    // Damaging an output forces its stage and everything after it.
    fs::write(proj.join("work/mesh.bin"), b"garbage").unwrap();
    let repaired = scarab(&["run", p, "--depth", "6", "--target-vertices", "5000", "--atlas-mp", "0.25"]);
    let s = stage_statuses(&repaired);
    assert_eq!(s["carve"], "cache-hit");
    assert_eq!(s["mesh"], "ran");
    // The rebuilt mesh is identical, so texture's inputs are unchanged.
    assert_eq!(s["texture"], "cache-hit");
}

#[test]
fn single_stage_commands_need_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let proj = simulate_project(dir.path(), &ellipsoid_scene(&SceneParams::small(90.0, &[30.0])));
    let out = scarab(&["carve", path_arg(&proj)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run the earlier stages first"));
}

#[test]
fn exit_codes_distinguish_input_errors_from_stage_failures() {
    let dir = tempfile::tempdir().unwrap();
    let proj = simulate_project(dir.path(), &ellipsoid_scene(&SceneParams::small(90.0, &[30.0])));
    let p = path_arg(&proj);

    // A view that cannot be decoded fails the pose stage and is named.
    let good = fs::read(proj.join("images/view_0002.png")).unwrap();
    fs::write(proj.join("images/view_0002.png"), b"not an image").unwrap();
    let out = scarab(&["run", p, "--stages", "pose"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("scarab-diag stage=pose pose=0002"), "{err}");
    // Other views' records are still written.
    assert!(proj.join("work/poses/pose_0001.toml").is_file());
    assert!(!proj.join("work/poses/pose_0002.toml").exists());

    // Later stages refuse the partial result unless failures are allowed.
    let out = scarab(&["mask", p]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pose=0002"));

    // With failures allowed the stage succeeds on the remaining views.
    let out = scarab(&["run", p, "--stages", "pose", "--allow-failed-views"]);
    assert!(out.status.success());
    assert_eq!(field(&stage_line(&out, "pose").unwrap(), "views").as_deref(), Some("3"));
    fs::write(proj.join("images/view_0002.png"), good).unwrap();

    // Broken manifest.
    let manifest = proj.join("manifest.toml");
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replace("view_0003.png", "missing.png")).unwrap();
    assert_eq!(scarab(&["run", p]).status.code(), Some(2));
    fs::write(&manifest, text).unwrap();

    // Malformed config.
    fs::write(proj.join("scarab.toml"), "[carve]\ndepth = 42\n").unwrap();
    let out = scarab(&["run", p]);
    assert_eq!(out.status.code(), Some(2));
    fs::remove_file(proj.join("scarab.toml")).unwrap();

    let out = scarab(&["run", p, "--print-config", "--depth", "4"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("depth = 4"));
}

#[test]
fn png_atlas_export_and_untextured_export() {
    let dir = tempfile::tempdir().unwrap();
    let proj = simulate_project(dir.path(), &ellipsoid_scene(&SceneParams::small(45.0, &[15.0, 35.0])));
    let p = path_arg(&proj);
    let out = scarab(&["run", p, "--depth", "5", "--atlas-mp", "0.25", "--atlas-format", "png"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(proj.join("export/atlas.png").is_file());
    let mtl = fs::read_to_string(proj.join("export/model.mtl")).unwrap();
    assert!(mtl.contains("atlas.png"));
    let x3d = fs::read_to_string(proj.join("export/model.x3d")).unwrap();
    roxmltree::Document::parse(&x3d).unwrap();

    fs::write(proj.join("scarab.toml"), "[stages]\ntexture = false\n").unwrap();
    fs::remove_dir_all(proj.join("export")).unwrap();
    let out = scarab(&["run", p, "--depth", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = stage_statuses(&out);
    assert_eq!(s["texture"], "skipped");
    assert_eq!(s["export"], "ran");
    assert!(!proj.join("export/model.mtl").exists());
}

#[test]
fn hand_drawn_mask_overrides_replace_the_automatic_mask() {
    let dir = tempfile::tempdir().unwrap();
    let proj = simulate_project(dir.path(), &ellipsoid_scene(&SceneParams::small(90.0, &[30.0])));
    let p = path_arg(&proj);
    let out = scarab(&["run", p, "--stages", "pose..mask"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let auto = image::open(proj.join("work/masks/pose_0000_mask.png")).unwrap().to_luma8();
    let mut drawn = auto.clone();
    for (x, _, px) in drawn.enumerate_pixels_mut() {
        if x < auto.width() / 2 {
            px.0 = [0];
        }
    }
    assert_ne!(drawn, auto);
    drawn.save(proj.join("images/view_0000_mask_override.png")).unwrap();

    let out = scarab(&["run", p, "--stages", "pose..mask"]);
    let s = stage_statuses(&out);
    assert_eq!((s["pose"].as_str(), s["mask"].as_str()), ("cache-hit", "ran"));
    let used = image::open(proj.join("work/masks/pose_0000_mask.png")).unwrap().to_luma8();
    assert_eq!(used, drawn);
    let other = image::open(proj.join("work/masks/pose_0001_mask.png")).unwrap().to_luma8();
    assert!(other.pixels().any(|p| p.0[0] == 255));
}
