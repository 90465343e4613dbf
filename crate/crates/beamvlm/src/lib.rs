//! File formats, run configuration and the command-line driver around
//! `beamvlm-core`: PGM/JSONL datasets, CRC-checked checkpoints, CSV/SVG
//! reports and multi-threaded evaluation.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod parallel;
pub mod report;

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unsupported checkpoint version {found} (this build reads {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt file {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("sample index {index} out of range ({len} samples)")]
    Index { index: usize, len: usize },
    #[error("report has no predictors")]
    EmptyReport,
    #[error(transparent)]
    Scene(#[from] beamvlm_core::scene::SceneError),
    #[error(transparent)]
    Phy(#[from] beamvlm_core::phy::PhyError),
    #[error(transparent)]
    Model(#[from] beamvlm_core::vlm::VlmError),
    #[error(transparent)]
    Train(#[from] beamvlm_core::train::TrainError),
    #[error(transparent)]
    Baseline(#[from] beamvlm_core::baseline::BaselineError),
    #[error(transparent)]
    Eval(#[from] beamvlm_core::eval::EvalError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(path: impl AsRef<Path>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.as_ref().to_path_buf(), reason: reason.into() }
    }

    /// Process exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::Version { .. } => 4,
            _ => 1,
        }
    }

    /// Short machine-readable class name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
            Error::Version { .. } => "VersionError",
            Error::Corruption { .. } => "CorruptionError",
            Error::Format { .. } => "FormatError",
            Error::Index { .. } => "IndexError",
            Error::EmptyReport => "EmptyReport",
            Error::Train(beamvlm_core::train::TrainError::Divergence { .. }) => "DivergenceError",
            _ => "RuntimeError",
        }
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
