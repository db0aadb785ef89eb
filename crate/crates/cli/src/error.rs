use std::fmt;
use std::path::{Path, PathBuf};

use carom_core::calib::CalibError;
use carom_core::config::ConfigError;
use carom_core::scene::SceneError;
use carom_core::shape::ShapeError;
use carom_core::synth::SynthError;
use carom_core::track::TrackError;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FILE: i32 = 3;
pub const EXIT_SCHEMA: i32 = 4;
pub const EXIT_FAILED: i32 = 5;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    File { path: PathBuf, message: String },
    Schema { path: PathBuf, message: String },
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::File { .. } => EXIT_FILE,
            Self::Schema { .. } => EXIT_SCHEMA,
            Self::Failed(_) => EXIT_FAILED,
        }
    }

    /// Sorts an I/O error on `path` into missing/unreadable vs malformed.
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        let message = e.to_string();
        if e.kind() == std::io::ErrorKind::InvalidData {
            Self::Schema {
                path: path.to_path_buf(),
                message,
            }
        } else {
            Self::File {
                path: path.to_path_buf(),
                message,
            }
        }
    }

    pub fn calib(path: &Path, e: CalibError) -> Self {
        match e {
            CalibError::Io(e) => Self::io(path, e),
            CalibError::Format(_) | CalibError::InvalidHeightfield(_) => Self::Schema {
                path: path.to_path_buf(),
                message: e.to_string(),
            },
            e => Self::Failed(e.to_string()),
        }
    }

    pub fn scene(path: &Path, e: SceneError) -> Self {
        match e {
            SceneError::Io(e) => Self::io(path, e),
            SceneError::MissingCalibration(p) => Self::File {
                path: p,
                message: "calibration not found".into(),
            },
            SceneError::Calib(e) => Self::calib(path, e),
            SceneError::SchemaMismatch { .. } | SceneError::Unordered { .. } => Self::Schema {
                path: path.to_path_buf(),
                message: e.to_string(),
            },
            e => Self::Failed(e.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Failed(m) => write!(f, "{m}"),
            Self::File { path, message } | Self::Schema { path, message } => {
                let p = path.display().to_string();
                if message.starts_with(&p) {
                    write!(f, "{message}")
                } else {
                    write!(f, "{p}: {message}")
                }
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { path, source } => Self::File {
                path: path.into(),
                message: source.to_string(),
            },
            ConfigError::Parse { path, source } => Self::Schema {
                path: path.into(),
                message: source.to_string(),
            },
            e @ ConfigError::Invalid { .. } => Self::Usage(e.to_string()),
        }
    }
}

impl From<TrackError> for CliError {
    fn from(e: TrackError) -> Self {
        Self::Failed(e.to_string())
    }
}

impl From<ShapeError> for CliError {
    fn from(e: ShapeError) -> Self {
        Self::Failed(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::Failed(e.to_string())
    }
}
