//! IO, file formats, configuration, and command drivers for the smooth
//! adversarial training laboratory. The algorithms live in `sat-core`; this
//! crate turns them into files, CSVs, and a CLI.

pub mod ckpt;
pub mod commands;
pub mod config;
pub mod csvout;
pub mod gradcheck;
pub mod idx;

use std::path::PathBuf;
use thiserror::Error;

/// Process exit codes, stable for CI consumption.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION_FAILED: i32 = 1;
pub const EXIT_CONFIG_ERROR: i32 = 2;
pub const EXIT_RUNTIME_ERROR: i32 = 3;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic {got:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        got: u32,
    },

    #[error("{path}: truncated ({context})")]
    Truncated { path: PathBuf, context: String },

    #[error("image file has {images} items but label file has {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: bad checkpoint magic")]
    BadCheckpointMagic { path: PathBuf },

    #[error("{path}: unsupported checkpoint version {got}, expected {expected}")]
    BadVersion {
        path: PathBuf,
        expected: u32,
        got: u32,
    },

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("checkpoint does not match the configured model: {why}")]
    SpecMismatch { why: String },

    #[error("{0}")]
    Data(sat_core::data::DataError),

    #[error("{0}")]
    Model(sat_core::model::ModelError),

    #[error("{0}")]
    Train(sat_core::train::TrainError),

    #[error("{0}")]
    Attack(sat_core::attack::AttackError),

    #[error("{0}")]
    Landscape(sat_core::landscape::LandscapeError),
}

impl LabError {
    /// Map an error to its process exit code: configuration and input-format
    /// problems exit 2, runtime failures (divergence, write errors) exit 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Io { .. } => EXIT_RUNTIME_ERROR,
            LabError::Train(sat_core::train::TrainError::Diverged { .. }) => EXIT_RUNTIME_ERROR,
            _ => EXIT_CONFIG_ERROR,
        }
    }
}

impl From<sat_core::data::DataError> for LabError {
    fn from(e: sat_core::data::DataError) -> Self {
        LabError::Data(e)
    }
}

impl From<sat_core::model::ModelError> for LabError {
    fn from(e: sat_core::model::ModelError) -> Self {
        LabError::Model(e)
    }
}

impl From<sat_core::train::TrainError> for LabError {
    fn from(e: sat_core::train::TrainError) -> Self {
        LabError::Train(e)
    }
}

impl From<sat_core::attack::AttackError> for LabError {
    fn from(e: sat_core::attack::AttackError) -> Self {
        LabError::Attack(e)
    }
}

impl From<sat_core::landscape::LandscapeError> for LabError {
    fn from(e: sat_core::landscape::LandscapeError) -> Self {
        LabError::Landscape(e)
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> LabError {
    let path = path.into();
    move |source| LabError::Io { path, source }
}
