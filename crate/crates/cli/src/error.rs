use std::fmt;
use std::path::{Path, PathBuf};

use scarab::export::ManifestError;
use thiserror::Error;

use crate::config::{ConfigError, Stage};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_STAGE: u8 = 3;

/// Problem with one view inside a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewDiagnostic {
    pub pose_id: u32,
    pub message: String,
}

impl fmt::Display for ViewDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pose {:04}: {}", self.pose_id, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("manifest invalid: {0}")]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scene invalid: {0}")]
    Scene(String),
    #[error("stage {stage} failed: {summary}")]
    StageFailed {
        stage: Stage,
        summary: String,
        diagnostics: Vec<ViewDiagnostic>,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Manifest(_) | CliError::Config(_) | CliError::Scene(_) => EXIT_INPUT,
            CliError::StageFailed { .. } | CliError::Io { .. } => EXIT_STAGE,
        }
    }

    pub fn stage(stage: Stage, summary: impl fmt::Display) -> Self {
        CliError::StageFailed {
            stage,
            summary: summary.to_string(),
            diagnostics: Vec::new(),
        }
    }
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}
