use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Mat3, Pose, Vec3};
use crate::plan::{CaptureMode, CaptureSchedule, LensModel, PlanError};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SCHEDULE_FILE: &str = "schedule.txt";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("referenced file {0} does not exist")]
    MissingFile(PathBuf),
    #[error("manifest views {manifest:?} do not match schedule views {schedule:?}")]
    ViewMismatch { manifest: Vec<u32>, schedule: Vec<u32> },
    #[error("manifest mode {manifest:?} disagrees with the schedule ({reason})")]
    ModeMismatch { manifest: CaptureMode, reason: String },
    #[error("schedule: {0}")]
    Schedule(#[from] PlanError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Files belonging to one captured image. Paths are relative to the
/// project directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub view_id: u32,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<String>,
}

/// Root description of a capture project, stored as `manifest.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectManifest {
    pub specimen: String,
    pub mode: CaptureMode,
    #[serde(default = "default_schedule")]
    pub schedule: String,
    pub mat_diameter_mm: f64,
    #[serde(default = "default_sectors")]
    pub mat_sectors: u32,
    pub camera: CameraIntrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lens: Option<LensModel>,
    pub views: Vec<ViewRecord>,
}

fn default_schedule() -> String {
    SCHEDULE_FILE.to_string()
}

fn default_sectors() -> u32 {
    crate::fiducial::DEFAULT_SECTOR_COUNT
}

impl ProjectManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ManifestError> {
        toml::from_str(text).map_err(|e| ManifestError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, ManifestError> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_toml()).map_err(io_err(&path))?;
        Ok(path)
    }

    /// Reads `dir/manifest.toml` and its schedule, then checks that every
    /// referenced file exists, the view ids match the schedule and the mode
    /// agrees with the schedule's rail positions.
    pub fn load(dir: &Path) -> Result<(Self, CaptureSchedule), ManifestError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest = Self::from_toml(&text, &path)?;
        let schedule_path = dir.join(&manifest.schedule);
        if !schedule_path.is_file() {
            return Err(ManifestError::MissingFile(schedule_path));
        }
        let schedule_text = fs::read_to_string(&schedule_path).map_err(io_err(&schedule_path))?;
        let schedule = CaptureSchedule::from_text(&schedule_text)?;
        manifest.check(dir, &schedule)?;
        Ok((manifest, schedule))
    }

    pub fn check(&self, dir: &Path, schedule: &CaptureSchedule) -> Result<(), ManifestError> {
        for v in &self.views {
            for rel in std::iter::once(&v.image).chain(v.mask.iter()).chain(v.pose.iter()) {
                let p = dir.join(rel);
                if !p.is_file() {
                    return Err(ManifestError::MissingFile(p));
                }
            }
        }
        let mut manifest_ids: Vec<u32> = self.views.iter().map(|v| v.view_id).collect();
        manifest_ids.sort_unstable();
        let mut schedule_ids: Vec<u32> = schedule.pose_groups().into_iter().flat_map(|g| g.view_ids).collect();
        schedule_ids.sort_unstable();
        if manifest_ids != schedule_ids {
            return Err(ManifestError::ViewMismatch {
                manifest: manifest_ids,
                schedule: schedule_ids,
            });
        }
        if self.mode != schedule.mode {
            return Err(ManifestError::ModeMismatch {
                manifest: self.mode,
                reason: format!("schedule is {:?}", schedule.mode),
            });
        }
        let railed = schedule.entries.iter().filter(|e| e.rail_mm.is_some()).count();
        let consistent = match self.mode {
            CaptureMode::Normal => railed == 0,
            CaptureMode::Macro => railed == schedule.entries.len(),
        };
        if !consistent {
            return Err(ManifestError::ModeMismatch {
                manifest: self.mode,
                reason: format!("{railed} of {} entries have rail positions", schedule.entries.len()),
            });
        }
        Ok(())
    }

    pub fn view(&self, view_id: u32) -> Option<&ViewRecord> {
        self.views.iter().find(|v| v.view_id == view_id)
    }
}

pub fn pose_file_name(view_id: u32) -> String {
    format!("view_{view_id:04}.pose.toml")
}

/// Per-view plain-text record of the camera: intrinsics plus the
/// world-to-camera pose, and the turntable setting it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSidecar {
    pub view_id: u32,
    pub pan_deg: f64,
    pub tilt_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rail_mm: Option<f64>,
    /// Rows of the world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub camera: CameraIntrinsics,
}

impl PoseSidecar {
    pub fn new(view_id: u32, pan_deg: f64, tilt_deg: f64, rail_mm: Option<f64>, pose: &Pose, camera: CameraIntrinsics) -> Self {
        let r = &pose.rotation;
        Self {
            view_id,
            pan_deg,
            tilt_deg,
            rail_mm,
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
            camera,
        }
    }

    pub fn pose(&self) -> Pose {
        let r = &self.rotation;
        Pose::from_parts(
            Mat3::from_fn(|i, j| r[i][j]),
            Vec3::new(self.translation[0], self.translation[1], self.translation[2]),
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let text = toml::to_string(self).expect("sidecar serializes");
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| ManifestError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}
