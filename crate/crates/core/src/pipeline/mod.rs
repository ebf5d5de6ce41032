//! Configuration, manifests, the synthetic scene generator and end-to-end
//! orchestration.
//!
//! [`run_pipeline`] takes each clip through tracking, calibration,
//! background pruning, ego-motion compensation and IMU synthesis. Clips
//! run concurrently and fail independently; every output carries the
//! configuration fingerprint. [`report`] runs the evaluation protocols
//! over real and virtual IMU datasets.

pub mod config;
pub mod dataset;
pub mod generator;
pub mod manifest;
pub mod run;

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::calib3d::CalibError;
use crate::distmap::DistError;
use crate::egomotion::EgoError;
use crate::harlab::HarError;
use crate::imusynth::SynthError;
use crate::trackio::TrackError;

pub use config::{DomainShift, EgoConfig, PipelineConfig, SynthStageConfig};
pub use dataset::{
    build_windows, fit_stream_map, load_dataset, load_streams, report, LoadedStream,
};
pub use generator::{
    generate_synthetic, CameraMotion, GeneratorConfig, GroundTruth, Scenario, Scene,
};
pub use manifest::{ClipManifest, ManifestSet};
pub use run::{
    process_clip, run_pipeline, ClipRecord, ClipStatus, EgoMode, ProcessedClip, RunSummary,
};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const DATA: i32 = 2;
    pub const PARTIAL: i32 = 3;
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {detail}")]
    Stage { stage: &'static str, detail: String },
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Ego(#[from] EgoError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Har(#[from] HarError),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Exit code for a run aborted by this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Har(HarError::InvalidParameter(_)) => {
                exit::CONFIG
            }
            _ => exit::DATA,
        }
    }
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| PipelineError::io(path, e))?;
    tmp.write_all(bytes)
        .map_err(|e| PipelineError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| PipelineError::io(path, e.error))?;
    Ok(())
}
