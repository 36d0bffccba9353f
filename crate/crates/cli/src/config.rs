//! Pipeline configuration.
//!
//! The effective configuration is built from three layers: built-in
//! defaults, command-line flags, and an optional TOML file. Each layer is a
//! TOML table; later layers replace individual keys of earlier ones, with the
//! file taking precedence over flags. The merged table must deserialize into
//! [`PipelineConfig`] with no unknown keys and pass [`PipelineConfig::validate`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use scarab::hull::{Consensus, DEFAULT_TARGET_VERTICES};
use scarab::silhouette::{SilhouetteOptions, DEFAULT_MIN_COMPONENT_FRACTION, DEFAULT_MORPHOLOGY_RADIUS, DEFAULT_THRESHOLD};
use scarab::stack::StackOptions;
use scarab::texture::{atlas_side_for, BakeOptions, DEFAULT_ATLAS_MEGAPIXELS, MIN_GUTTER};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// File looked up in the project directory when no `--config` is given.
pub const PROJECT_CONFIG_FILE: &str = "scarab.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {key} = {value} is outside {range}")]
    OutOfRange { key: &'static str, value: String, range: &'static str },
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
    #[error("stages must be contiguous in pipeline order: {0}")]
    NonContiguous(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stack,
    Pose,
    Mask,
    Carve,
    Mesh,
    Texture,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Stack,
        Stage::Pose,
        Stage::Mask,
        Stage::Carve,
        Stage::Mesh,
        Stage::Texture,
        Stage::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Stack => "stack",
            Stage::Pose => "pose",
            Stage::Mask => "mask",
            Stage::Carve => "carve",
            Stage::Mesh => "mesh",
            Stage::Texture => "texture",
            Stage::Export => "export",
        }
    }

    fn position(self) -> usize {
        Stage::ALL.iter().position(|&s| s == self).expect("listed")
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| ConfigError::UnknownStage(s.to_string()))
    }
}

/// Parses `pose,mask,carve` or `pose..export` into a contiguous, ordered
/// stage list.
pub fn parse_stage_list(spec: &str) -> Result<Vec<Stage>, ConfigError> {
    let stages: Vec<Stage> = if let Some((a, b)) = spec.split_once("..") {
        let (a, b) = (a.parse::<Stage>()?, b.parse::<Stage>()?);
        Stage::ALL[a.position()..=b.position().max(a.position())].to_vec()
    } else {
        spec.split(',').map(str::parse).collect::<Result<_, _>>()?
    };
    check_contiguous(&stages)?;
    Ok(stages)
}

pub fn check_contiguous(stages: &[Stage]) -> Result<(), ConfigError> {
    let ok = !stages.is_empty() && stages.windows(2).all(|w| w[1].position() == w[0].position() + 1);
    if ok {
        Ok(())
    } else {
        let names: Vec<&str> = stages.iter().map(|s| s.name()).collect();
        Err(ConfigError::NonContiguous(names.join(",")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageToggles {
    pub stack: bool,
    pub pose: bool,
    pub mask: bool,
    pub carve: bool,
    pub mesh: bool,
    pub texture: bool,
    pub export: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            stack: true,
            pose: true,
            mask: true,
            carve: true,
            mesh: true,
            texture: true,
            export: true,
        }
    }
}

impl StageToggles {
    pub fn enabled(&self, stage: Stage) -> bool {
        match stage {
            Stage::Stack => self.stack,
            Stage::Pose => self.pose,
            Stage::Mask => self.mask,
            Stage::Carve => self.carve,
            Stage::Mesh => self.mesh,
            Stage::Texture => self.texture,
            Stage::Export => self.export,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackConfig {
    /// Focus-measure window radius; scaled from image width when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_radius: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth_radius: Option<u32>,
    pub blend_seams: bool,
}

impl StackConfig {
    pub fn options(&self, width: u32) -> StackOptions {
        let scaled = StackOptions::scaled_for(width);
        StackOptions {
            window_radius: self.window_radius.unwrap_or(scaled.window_radius),
            smooth_radius: self.smooth_radius.unwrap_or(scaled.smooth_radius),
            blend_seams: self.blend_seams,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseConfig {
    pub refine: bool,
    pub min_correspondences: usize,
    pub ransac_iterations: usize,
    pub seed: u32,
}

impl Default for PoseConfig {
    fn default() -> Self {
        let d = scarab::fiducial::DetectConfig::default();
        Self {
            refine: true,
            min_correspondences: d.min_correspondences,
            ransac_iterations: d.ransac_iterations,
            seed: d.seed as u32,
        }
    }
}

impl PoseConfig {
    pub fn detect_config(&self) -> scarab::fiducial::DetectConfig {
        scarab::fiducial::DetectConfig {
            min_correspondences: self.min_correspondences,
            ransac_iterations: self.ransac_iterations,
            seed: self.seed as u64,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub threshold: f32,
    pub morphology_radius: u32,
    pub min_component_fraction: f64,
    pub cleanup: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            morphology_radius: DEFAULT_MORPHOLOGY_RADIUS,
            min_component_fraction: DEFAULT_MIN_COMPONENT_FRACTION,
            cleanup: true,
        }
    }
}

impl MaskConfig {
    pub fn options(&self) -> SilhouetteOptions {
        SilhouetteOptions {
            threshold: self.threshold,
            morphology_radius: self.morphology_radius,
            min_component_fraction: self.min_component_fraction,
            cleanup: self.cleanup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarveConfig {
    pub depth: u8,
    /// Views allowed to disagree; zero requires every view (k = n).
    pub consensus_slack: u32,
    /// Enables photo-consistency pruning with this colour-variance bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photo_threshold: Option<f64>,
}

impl Default for CarveConfig {
    fn default() -> Self {
        Self {
            depth: 7,
            consensus_slack: 0,
            photo_threshold: None,
        }
    }
}

impl CarveConfig {
    pub fn consensus(&self) -> Consensus {
        Consensus::AllBut(self.consensus_slack)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub target_vertices: usize,
    pub keep_largest: bool,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            target_vertices: DEFAULT_TARGET_VERTICES,
            keep_largest: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureConfig {
    pub megapixels: f64,
    pub gutter: u32,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            megapixels: DEFAULT_ATLAS_MEGAPIXELS,
            gutter: MIN_GUTTER,
        }
    }
}

impl TextureConfig {
    pub fn options(&self) -> BakeOptions {
        BakeOptions {
            megapixels: self.megapixels,
            gutter: self.gutter,
            ..BakeOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtlasFormat {
    Jpeg,
    Png,
}

impl AtlasFormat {
    pub fn extension(self) -> &'static str {
        match self {
            AtlasFormat::Jpeg => "jpg",
            AtlasFormat::Png => "png",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    pub stl: bool,
    pub obj: bool,
    pub x3d: bool,
    pub html: bool,
    pub atlas_format: AtlasFormat,
    pub jpeg_quality: u8,
    pub runtime_url: String,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            stl: true,
            obj: true,
            x3d: true,
            html: true,
            atlas_format: AtlasFormat::Jpeg,
            jpeg_quality: 90,
            runtime_url: scarab::export::DEFAULT_RUNTIME_URL.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Worker threads; zero uses every available core.
    pub threads: usize,
    /// Continue without views whose pose or mask fails instead of stopping.
    pub allow_failed_views: bool,
    pub stages: StageToggles,
    pub stack: StackConfig,
    pub pose: PoseConfig,
    pub mask: MaskConfig,
    pub carve: CarveConfig,
    pub mesh: MeshConfig,
    pub texture: TextureConfig,
    pub export: ExportConfig,
}

fn range(key: &'static str, value: impl fmt::Display, ok: bool, range: &'static str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            key,
            value: value.to_string(),
            range,
        })
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        range("threads", self.threads, self.threads <= 1024, "0..=1024")?;
        if let Some(r) = self.stack.window_radius {
            range("stack.window_radius", r, (1..=64).contains(&r), "1..=64")?;
        }
        if let Some(r) = self.stack.smooth_radius {
            range("stack.smooth_radius", r, r <= 64, "0..=64")?;
        }
        let p = &self.pose;
        range("pose.min_correspondences", p.min_correspondences, (4..=10_000).contains(&p.min_correspondences), "4..=10000")?;
        range("pose.ransac_iterations", p.ransac_iterations, (1..=100_000).contains(&p.ransac_iterations), "1..=100000")?;
        let m = &self.mask;
        range("mask.threshold", m.threshold, m.threshold > 0.0 && m.threshold <= 3f32.sqrt(), "(0, 1.732]")?;
        range("mask.morphology_radius", m.morphology_radius, m.morphology_radius <= 32, "0..=32")?;
        range(
            "mask.min_component_fraction",
            m.min_component_fraction,
            (0.0..1.0).contains(&m.min_component_fraction),
            "[0, 1)",
        )?;
        let c = &self.carve;
        range("carve.depth", c.depth, (3..=10).contains(&c.depth), "3..=10")?;
        if let Some(t) = c.photo_threshold {
            range("carve.photo_threshold", t, t.is_finite() && t > 0.0, "(0, inf)")?;
        }
        range("mesh.target_vertices", self.mesh.target_vertices, self.mesh.target_vertices >= 4, ">= 4")?;
        let t = &self.texture;
        range("texture.megapixels", t.megapixels, atlas_side_for(t.megapixels).is_ok(), "(0, 268]")?;
        range("texture.gutter", t.gutter, (MIN_GUTTER..=64).contains(&t.gutter), "2..=64")?;
        let e = &self.export;
        range("export.jpeg_quality", e.jpeg_quality, (1..=100).contains(&e.jpeg_quality), "1..=100")?;
        range("export.runtime_url", &e.runtime_url, !e.runtime_url.trim().is_empty(), "non-empty")?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults, then `flags`, then `file`, each replacing individual keys.
    pub fn layered(flags: &toml::Table, file: Option<&toml::Table>) -> Result<Self, ConfigError> {
        let mut merged = toml::Table::try_from(Self::default()).expect("defaults serialize");
        merge(&mut merged, flags);
        if let Some(file) = file {
            merge(&mut merged, file);
        }
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text of the settings that affect `stage`, for cache keys.
    pub fn stage_section(&self, stage: Stage) -> String {
        let section = match stage {
            Stage::Stack => toml::to_string(&self.stack),
            Stage::Pose => toml::to_string(&self.pose),
            Stage::Mask => toml::to_string(&self.mask),
            Stage::Carve => toml::to_string(&self.carve),
            Stage::Mesh => toml::to_string(&self.mesh),
            Stage::Texture => toml::to_string(&self.texture),
            Stage::Export => toml::to_string(&self.export),
        };
        section.expect("section serializes")
    }
}

pub fn read_table(path: &Path) -> Result<toml::Table, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.parse::<toml::Table>()
        .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))
}

/// Recursively overlays `top` onto `base`.
pub fn merge(base: &mut toml::Table, top: &toml::Table) {
    for (k, v) in top {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Sets `section.key` (or a top-level `key`) in a flag table.
pub fn set_flag(table: &mut toml::Table, dotted: &str, value: impl Into<toml::Value>) {
    match dotted.split_once('.') {
        Some((section, key)) => {
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(t) = entry {
                t.insert(key.to_string(), value.into());
            }
        }
        None => {
            table.insert(dotted.to_string(), value.into());
        }
    }
}
