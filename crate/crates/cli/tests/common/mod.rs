//! Helpers shared by the binary-level test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_scarab");

pub struct SceneParams {
    pub width: u32,
    pub height: u32,
    pub focal_px: f64,
    pub pan_step: f64,
    pub tilts: Vec<f64>,
}

impl SceneParams {
    /// 640x480 view of the 40 mm mat from 200 mm.
    pub fn small(pan_step: f64, tilts: &[f64]) -> Self {
        Self {
            width: 640,
            height: 480,
            focal_px: 1829.0,
            pan_step,
            tilts: tilts.to_vec(),
        }
    }
}

/// Textured ellipsoid (20 x 16 x 14 mm) resting 1 mm above the mat.
pub fn ellipsoid_scene(p: &SceneParams) -> String {
    let tilts: Vec<String> = p.tilts.iter().map(|t| format!("{t:?}")).collect();
    format!(
        r#"specimen = "ellipsoid"
mat_diameter_mm = 40.0
distance_mm = 200.0
background = [0.35, 0.4, 0.55]

[camera]
focal_length_px = {f:?}
width = {w}
height = {h}

[light]
direction = [0.28734788556634544, -0.19156525704423027, 0.9578262852211513]
intensity = 0.75
ambient = 0.45
specular = 0.0
shininess = 40.0

[plan]
pan_step_deg = {pan:?}
tilts_deg = [{tilts}]

[[objects]]
shape = {{ kind = "ellipsoid", centre = [0.0, 0.0, 15.0], radii = [10.0, 8.0, 7.0] }}
albedo = {{ kind = "noise", a = [0.85, 0.55, 0.2], b = [0.6, 0.35, 0.1], scale_mm = 1.5, seed = 1 }}
"#,
        f = p.focal_px,
        w = p.width,
        h = p.height,
        pan = p.pan_step,
        tilts = tilts.join(", ")
    )
}

pub fn scarab(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn path_arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes the scene and simulates it into `dir/proj`.
pub fn simulate_project(dir: &Path, scene: &str) -> PathBuf {
    let scene_path = dir.join("scene.toml");
    fs::write(&scene_path, scene).unwrap();
    let proj = dir.join("proj");
    let out = scarab(&["simulate", path_arg(&scene_path), path_arg(&proj)]);
    assert!(out.status.success(), "simulate failed: {}", String::from_utf8_lossy(&out.stderr));
    proj
}

/// `stage -> status` from the log lines on stdout.
pub fn stage_statuses(out: &Output) -> BTreeMap<String, String> {
    let text = String::from_utf8_lossy(&out.stdout);
    text.lines()
        .filter(|l| l.starts_with("scarab-stage "))
        .map(|l| (field(l, "stage").unwrap(), field(l, "status").unwrap()))
        .collect()
}

pub fn stage_line(out: &Output, stage: &str) -> Option<String> {
    let text = String::from_utf8_lossy(&out.stdout);
    text.lines()
        .find(|l| l.starts_with("scarab-stage ") && field(l, "stage").as_deref() == Some(stage))
        .map(str::to_string)
}

pub fn field(line: &str, key: &str) -> Option<String> {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .map(str::to_string)
}

pub fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Relative path to file bytes for everything under `dir`.
pub fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<String, Vec<u8>>) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        for e in entries {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, acc);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                acc.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(dir, dir, &mut acc);
    acc
}
