//! On-disk layout of a capture project and its pipeline artifacts.
//!
//! ```text
//! <project>/manifest.toml, schedule.txt       capture description
//! <project>/images/...                        source images (paths from the manifest)
//! <project>/work/stacked/pose_NNNN.png        all-in-focus image (macro mode)
//! <project>/work/stacked/pose_NNNN_index.png  16-bit source-slice map
//! <project>/work/poses/pose_NNNN.toml         estimated camera pose
//! <project>/work/masks/pose_NNNN_mask.png     silhouette
//! <project>/work/hull.octree                  carved volume
//! <project>/work/mesh.bin                     surface mesh
//! <project>/work/texture/{model.bin,atlas.png}
//! <project>/export/model.{stl,obj,mtl,x3d,html}, atlas.{jpg,png}
//! <project>/cache/<stage>.toml                stage cache records
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use scarab::export::{ProjectManifest, MANIFEST_FILE};
use scarab::geometry::{Mat3, Pose, Vec3};
use scarab::plan::{CaptureMode, CaptureSchedule, PoseGroup};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError};

pub struct Project {
    pub root: PathBuf,
    pub manifest: ProjectManifest,
    pub schedule: CaptureSchedule,
    pub groups: Vec<PoseGroup>,
}

impl Project {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        let (manifest, schedule) = ProjectManifest::load(root)?;
        let groups = schedule.pose_groups();
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            schedule,
            groups,
        })
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn schedule_path(&self) -> PathBuf {
        self.root.join(&self.manifest.schedule)
    }

    pub fn is_macro(&self) -> bool {
        self.manifest.mode == CaptureMode::Macro
    }

    pub fn group(&self, pose_id: u32) -> &PoseGroup {
        &self.groups[pose_id as usize]
    }

    pub fn view_image(&self, view_id: u32) -> PathBuf {
        let record = self.manifest.view(view_id).expect("manifest checked against schedule");
        self.root.join(&record.image)
    }

    fn work(&self, parts: &[&str]) -> PathBuf {
        parts.iter().fold(self.root.join("work"), |p, s| p.join(s))
    }

    pub fn stacked_image(&self, pose_id: u32) -> PathBuf {
        self.work(&["stacked", &format!("pose_{pose_id:04}.png")])
    }

    pub fn stacked_index(&self, pose_id: u32) -> PathBuf {
        self.work(&["stacked", &format!("pose_{pose_id:04}_index.png")])
    }

    /// The single image representing a pose: the stacked result in macro
    /// mode, the captured image otherwise.
    pub fn pose_image(&self, pose_id: u32) -> PathBuf {
        if self.is_macro() {
            self.stacked_image(pose_id)
        } else {
            self.view_image(self.group(pose_id).view_ids[0])
        }
    }

    /// Hand-drawn mask replacing the automatic one, stored beside the
    /// pose's first image.
    pub fn mask_override(&self, pose_id: u32) -> Option<PathBuf> {
        let first = self.group(pose_id).view_ids[0];
        let image = self.view_image(first);
        scarab::silhouette::find_override(image.parent()?, first)
    }

    pub fn pose_record(&self, pose_id: u32) -> PathBuf {
        self.work(&["poses", &format!("pose_{pose_id:04}.toml")])
    }

    pub fn pose_index(&self) -> PathBuf {
        self.work(&["poses", "index.toml"])
    }

    pub fn mask(&self, pose_id: u32) -> PathBuf {
        self.work(&["masks", &format!("pose_{pose_id:04}_mask.png")])
    }

    pub fn mask_index(&self) -> PathBuf {
        self.work(&["masks", "index.toml"])
    }

    pub fn hull(&self) -> PathBuf {
        self.work(&["hull.octree"])
    }

    pub fn mesh(&self) -> PathBuf {
        self.work(&["mesh.bin"])
    }

    pub fn textured_mesh(&self) -> PathBuf {
        self.work(&["texture", "model.bin"])
    }

    pub fn atlas(&self) -> PathBuf {
        self.work(&["texture", "atlas.png"])
    }

    pub fn export_dir(&self) -> PathBuf {
        self.root.join("export")
    }
}

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

/// Camera pose and mat appearance recovered for one pose group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub pose_id: u32,
    /// Rows of the world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub ink_rgb: [f32; 3],
    pub paper_rgb: [f32; 3],
    pub correspondences: usize,
    pub initial_rms_px: f64,
    pub rms_px: f64,
}

impl PoseRecord {
    pub fn set_pose(&mut self, pose: &Pose) {
        let r = &pose.rotation;
        self.rotation = std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]));
        self.translation = [pose.translation.x, pose.translation.y, pose.translation.z];
    }

    pub fn pose(&self) -> Pose {
        let r = &self.rotation;
        Pose::from_parts(
            Mat3::from_fn(|i, j| r[i][j]),
            Vec3::new(self.translation[0], self.translation[1], self.translation[2]),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewFailure {
    pub pose_id: u32,
    pub reason: String,
}

/// Which poses a per-view stage produced artifacts for.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewIndex {
    pub ok: Vec<u32>,
    pub failed: Vec<ViewFailure>,
}

pub fn save_toml<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, toml::to_string(value).expect("value serializes")).map_err(io_err(path))
}

pub fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
    })
}
