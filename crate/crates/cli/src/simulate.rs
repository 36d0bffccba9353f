//! Synthetic capture projects rendered from a scene description.
//!
//! A scene file lists analytic or STL shapes with procedural albedo, the
//! mat, the camera and a capture plan. Simulation writes a complete project
//! (images, manifest, schedule) plus the ground truth needed to score a
//! reconstruction.
//!
//! ```toml
//! specimen = "ellipsoid"
//! mat_diameter_mm = 40.0
//! distance_mm = 200.0
//! background = [0.3, 0.35, 0.45]
//!
//! [camera]
//! focal_length_px = 4663.0
//! width = 1632
//! height = 1224
//!
//! [plan]
//! pan_step_deg = 10.0
//! tilts_deg = [10.0, 20.0, 30.0, 40.0]
//!
//! [[objects]]
//! shape = { kind = "ellipsoid", centre = [0.0, 0.0, 15.0], radii = [10.0, 8.0, 7.0] }
//! albedo = { kind = "noise", a = [0.8, 0.6, 0.3], b = [0.2, 0.1, 0.05], scale_mm = 1.5, seed = 7 }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use scarab::export::{pose_file_name, read_stl, write_stl, PoseSidecar, ProjectManifest, ViewRecord, SCHEDULE_FILE};
use scarab::fiducial::{generate_mat, DEFAULT_SECTOR_COUNT};
use scarab::geometry::{orbit_pose, CameraIntrinsics, Vec3};
use scarab::imaging::save_rgb_png;
use scarab::mesh::{shapes, TexturedMesh};
use scarab::plan::{
    build_pose_schedule, depth_of_field, CaptureMode, CaptureSchedule, ExtraView, LensModel, ShotPlan,
    DEFAULT_PAN_STEP_DEG, DEFAULT_TILTS_DEG,
};
use scarab::sim::{
    defocus_from_render, nearest_object_depth, render_prepared, Albedo, Light, PreparedScene, SceneObject,
    SyntheticScene,
};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub focal_length_px: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    #[serde(default = "default_pan_step")]
    pub pan_step_deg: f64,
    #[serde(default = "default_tilts")]
    pub tilts_deg: Vec<f64>,
    #[serde(default = "default_mode")]
    pub mode: CaptureMode,
    #[serde(default)]
    pub extra_views: Vec<ExtraView>,
    /// Macro mode: rail step; defaults to 0.7 of the depth of field.
    #[serde(default)]
    pub rail_step_mm: Option<f64>,
    /// Macro mode: slices per pose.
    #[serde(default)]
    pub slices: Option<usize>,
}

fn default_pan_step() -> f64 {
    DEFAULT_PAN_STEP_DEG
}

fn default_tilts() -> Vec<f64> {
    DEFAULT_TILTS_DEG.to_vec()
}

fn default_mode() -> CaptureMode {
    CaptureMode::Normal
}

impl Default for PlanSpec {
    fn default() -> Self {
        Self {
            pan_step_deg: default_pan_step(),
            tilts_deg: default_tilts(),
            mode: CaptureMode::Normal,
            extra_views: Vec::new(),
            rail_step_mm: None,
            slices: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Ellipsoid {
        centre: [f64; 3],
        radii: [f64; 3],
        #[serde(default = "default_stacks")]
        stacks: usize,
        #[serde(default = "default_slices")]
        slices: usize,
    },
    Sphere {
        centre: [f64; 3],
        radius: f64,
        #[serde(default = "default_stacks")]
        stacks: usize,
        #[serde(default = "default_slices")]
        slices: usize,
    },
    Cuboid {
        min: [f64; 3],
        max: [f64; 3],
    },
    Cylinder {
        base: [f64; 3],
        radius: f64,
        height: f64,
        #[serde(default = "default_slices")]
        segments: usize,
    },
    /// Binary STL, path relative to the scene file, optionally translated.
    Stl {
        path: PathBuf,
        #[serde(default)]
        offset: [f64; 3],
    },
}

fn default_stacks() -> usize {
    96
}

fn default_slices() -> usize {
    192
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl ShapeSpec {
    pub fn mesh(&self, base_dir: &Path) -> Result<TexturedMesh, CliError> {
        Ok(match self {
            ShapeSpec::Ellipsoid {
                centre,
                radii,
                stacks,
                slices,
            } => shapes::ellipsoid(v3(*centre), v3(*radii), *stacks, *slices),
            ShapeSpec::Sphere {
                centre,
                radius,
                stacks,
                slices,
            } => shapes::sphere(v3(*centre), *radius, *stacks, *slices),
            ShapeSpec::Cuboid { min, max } => shapes::cuboid(v3(*min), v3(*max)),
            ShapeSpec::Cylinder {
                base,
                radius,
                height,
                segments,
            } => shapes::cylinder(v3(*base), *radius, *height, *segments),
            ShapeSpec::Stl { path, offset } => {
                let full = base_dir.join(path);
                let bytes = fs::read(&full).map_err(io_err(&full))?;
                let stl = read_stl(&bytes).map_err(|e| CliError::Scene(format!("{}: {e}", full.display())))?;
                stl.to_mesh().translated(v3(*offset))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: ShapeSpec,
    pub albedo: Albedo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub specimen: String,
    pub mat_diameter_mm: f64,
    #[serde(default = "default_sectors")]
    pub mat_sectors: u32,
    pub distance_mm: f64,
    /// Orbit pivot; defaults to the centre of the first object's bounds.
    #[serde(default)]
    pub target_mm: Option<[f64; 3]>,
    #[serde(default = "default_background")]
    pub background: [f32; 3],
    pub camera: CameraSpec,
    #[serde(default)]
    pub light: Option<Light>,
    #[serde(default)]
    pub plan: PlanSpec,
    #[serde(default)]
    pub lens: Option<LensModel>,
    pub objects: Vec<ObjectSpec>,
}

fn default_sectors() -> u32 {
    DEFAULT_SECTOR_COUNT
}

fn default_background() -> [f32; 3] {
    [0.3, 0.35, 0.45]
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Scene(e.to_string()))
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, CliError> {
        let c = &self.camera;
        CameraIntrinsics::centred(c.focal_length_px, c.width, c.height).map_err(|e| CliError::Scene(e.to_string()))
    }

    /// Rail positions for macro mode.
    pub fn rails(&self) -> Result<Vec<f64>, CliError> {
        let lens = self.lens.ok_or_else(|| CliError::Scene("macro mode needs a [lens] section".into()))?;
        let step = self.plan.rail_step_mm.unwrap_or_else(|| 0.7 * depth_of_field(&lens));
        let n = self.plan.slices.ok_or_else(|| CliError::Scene("macro mode needs plan.slices".into()))?;
        if !(step > 0.0) || n == 0 {
            return Err(CliError::Scene("rail step and slice count must be positive".into()));
        }
        Ok((0..n).map(|i| i as f64 * step).collect())
    }

    pub fn schedule(&self) -> Result<CaptureSchedule, CliError> {
        let shots = match self.plan.mode {
            CaptureMode::Normal => ShotPlan::Single,
            CaptureMode::Macro => ShotPlan::Stack(self.rails()?),
        };
        let schedule = build_pose_schedule(self.plan.pan_step_deg, &self.plan.tilts_deg, &shots)
            .map_err(|e| CliError::Scene(e.to_string()))?;
        Ok(schedule.with_extra_views(self.plan.extra_views.iter().copied()))
    }

    pub fn build(&self, base_dir: &Path) -> Result<(SyntheticScene, TexturedMesh), CliError> {
        if self.objects.is_empty() {
            return Err(CliError::Scene("scene has no objects".into()));
        }
        let mat = generate_mat(self.mat_diameter_mm, self.mat_sectors, true)
            .map_err(|e| CliError::Scene(format!("mat: {e}")))?;
        let objects = self
            .objects
            .iter()
            .map(|o| {
                Ok(SceneObject {
                    mesh: o.shape.mesh(base_dir)?,
                    albedo: o.albedo.clone(),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let truth = objects
            .iter()
            .skip(1)
            .fold(objects[0].mesh.clone(), |acc, o| acc.merged(&o.mesh));
        let scene = SyntheticScene::new(objects, Some(mat.model), self.background, self.light.clone().unwrap_or_default())
            .map_err(|e| CliError::Scene(e.to_string()))?;
        Ok((scene, truth))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub poses: usize,
    pub images: usize,
}

/// Renders the scene at `scene_path` into a new project at `out`. A
/// schedule file, when given, replaces the scene's plan.
pub fn simulate(scene_path: &Path, out: &Path, schedule_file: Option<&Path>) -> Result<SimSummary, CliError> {
    let text = fs::read_to_string(scene_path).map_err(io_err(scene_path))?;
    let spec = SceneSpec::from_toml(&text)?;
    let schedule = match schedule_file {
        Some(path) => {
            let t = fs::read_to_string(path).map_err(io_err(path))?;
            CaptureSchedule::from_text(&t).map_err(|e| CliError::Scene(format!("{}: {e}", path.display())))?
        }
        None => spec.schedule()?,
    };
    let base_dir = scene_path.parent().unwrap_or(Path::new("."));
    let (scene, truth) = spec.build(base_dir)?;
    let intr = spec.intrinsics()?;
    let lens = match schedule.mode {
        CaptureMode::Macro => Some(spec.lens.ok_or_else(|| CliError::Scene("macro mode needs a [lens] section".into()))?),
        CaptureMode::Normal => None,
    };
    let target = spec.target_mm.map(v3).unwrap_or_else(|| {
        let c = scene.objects[0].mesh.bounds().centre();
        Vec3::new(0.0, 0.0, c.z)
    });

    for sub in ["images", "poses", "truth"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let groups = schedule.pose_groups();
    let prepared = PreparedScene::new(&scene);
    let records: Vec<Vec<ViewRecord>> = groups
        .par_iter()
        .map(|g| {
            let pose = orbit_pose(target, spec.distance_mm, g.pan_deg, g.tilt_deg);
            let sharp = render_prepared(&prepared, &intr, &pose);
            let images = match lens {
                Some(lens) => {
                    let near = nearest_object_depth(&sharp, &intr);
                    defocus_from_render(&sharp, &intr, &lens, &g.rail_mm, near)
                }
                None => vec![sharp.image],
            };
            g.view_ids
                .iter()
                .zip(images)
                .enumerate()
                .map(|(k, (&view_id, img))| {
                    let image = format!("images/view_{view_id:04}.png");
                    let path = out.join(&image);
                    save_rgb_png(&img, &path).map_err(|e| CliError::Scene(format!("{}: {e}", path.display())))?;
                    let pose_rel = format!("poses/{}", pose_file_name(view_id));
                    PoseSidecar::new(view_id, g.pan_deg, g.tilt_deg, g.rail_mm.get(k).copied(), &pose, intr)
                        .save(&out.join(&pose_rel))?;
                    Ok(ViewRecord {
                        view_id,
                        image,
                        mask: None,
                        pose: Some(pose_rel),
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()
        })
        .collect::<Result<_, _>>()?;
    let views: Vec<ViewRecord> = records.into_iter().flatten().collect();

    let write = |rel: &str, bytes: &[u8]| -> Result<(), CliError> {
        let p = out.join(rel);
        fs::write(&p, bytes).map_err(io_err(&p))
    };
    write(SCHEDULE_FILE, schedule.to_text().as_bytes())?;
    let manifest = ProjectManifest {
        specimen: spec.specimen.clone(),
        mode: schedule.mode,
        schedule: SCHEDULE_FILE.to_string(),
        mat_diameter_mm: spec.mat_diameter_mm,
        mat_sectors: spec.mat_sectors,
        camera: intr,
        lens: spec.lens,
        views,
    };
    manifest.save(out)?;
    let mat = generate_mat(spec.mat_diameter_mm, spec.mat_sectors, true).map_err(|e| CliError::Scene(e.to_string()))?;
    write("mat.svg", mat.svg.as_bytes())?;
    write("truth/specimen.stl", &write_stl(&truth).map_err(|e| CliError::Scene(e.to_string()))?)?;
    write("truth/scene.toml", text.as_bytes())?;
    Ok(SimSummary {
        poses: groups.len(),
        images: schedule.image_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENE: &str = r#"
specimen = "bead"
mat_diameter_mm = 40.0
distance_mm = 200.0

[camera]
focal_length_px = 1200.0
width = 400
height = 300

[plan]
pan_step_deg = 180.0
tilts_deg = [30.0]

[[objects]]
shape = { kind = "sphere", centre = [0.0, 0.0, 6.0], radius = 5.0, stacks = 16, slices = 32 }
albedo = { kind = "uniform", colour = [0.8, 0.5, 0.2] }
"#;

    #[test]
    fn scene_files_parse_with_defaults() {
        let spec = SceneSpec::from_toml(SCENE).unwrap();
        assert_eq!(spec.mat_sectors, DEFAULT_SECTOR_COUNT);
        assert_eq!(spec.plan.mode, CaptureMode::Normal);
        let s = spec.schedule().unwrap();
        assert_eq!(s.image_count(), 2);
        assert!(SceneSpec::from_toml(&format!("{SCENE}\nbogus = 1\n")).is_err());
    }

    #[test]
    fn macro_plans_need_a_lens() {
        let text = SCENE.replace("tilts_deg = [30.0]", "tilts_deg = [30.0]\nmode = \"macro\"\nslices = 5");
        let spec = SceneSpec::from_toml(&text).unwrap();
        assert!(spec.schedule().is_err());
        let with_lens = format!("{text}\n[lens]\nmagnification = 2.0\nf_number = 8.0\ncircle_of_confusion = 0.03\n");
        let spec = SceneSpec::from_toml(&with_lens).unwrap();
        let s = spec.schedule().unwrap();
        assert_eq!(s.image_count(), 10);
        let rails = spec.rails().unwrap();
        assert!((rails[1] - 0.7 * depth_of_field(&spec.lens.unwrap())).abs() < 1e-12);
    }

    #[test]
    fn simulation_writes_a_loadable_project() {
        let dir = tempfile::tempdir().unwrap();
        let scene = dir.path().join("scene.toml");
        fs::write(&scene, SCENE).unwrap();
        let out = dir.path().join("proj");
        let summary = simulate(&scene, &out, None).unwrap();
        assert_eq!(summary, SimSummary { poses: 2, images: 2 });
        let (manifest, schedule) = ProjectManifest::load(&out).unwrap();
        assert_eq!(manifest.views.len(), 2);
        assert_eq!(schedule.image_count(), 2);
        assert!(out.join("truth/specimen.stl").is_file());
        let side = PoseSidecar::load(&out.join("poses").join(pose_file_name(1))).unwrap();
        assert_eq!(side.pan_deg, 180.0);
    }
}
