//! Strict JSON pipeline configuration.
//!
//! Every section is optional and falls back to its defaults; unknown keys
//! anywhere are rejected. The `version` key is mandatory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::calib3d::CalibConfig;
use crate::egomotion::IcpConfig;
use crate::harlab::EvalConfig;
use crate::imusynth::{NoiseParams, SensorPlacement, SynthConfig};
use crate::trackio::{FilterConfig, IngestConfig, SmoothConfig, TrackerConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EgoConfig {
    pub icp: IcpConfig,
    /// Pixel stride when back-projecting depth maps.
    pub stride: u32,
    /// Margin in pixels added around person boxes before masking.
    pub mask_margin: f64,
}

impl Default for EgoConfig {
    fn default() -> Self {
        Self {
            icp: IcpConfig::default(),
            stride: 2,
            mask_margin: 4.0,
        }
    }
}

/// Affine distortion of virtual accelerometer and gyroscope samples,
/// `v ↦ gain·v + offset` per axis. Used to emulate a sensor-domain gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainShift {
    pub accel_gain: f64,
    pub accel_offset: f64,
    pub gyro_gain: f64,
    pub gyro_offset: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        Self {
            accel_gain: 1.0,
            accel_offset: 0.0,
            gyro_gain: 1.0,
            gyro_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthStageConfig {
    /// Placement names in window channel order.
    pub placements: Vec<String>,
    pub signal: SynthConfig,
    pub noise: NoiseParams,
    /// Add sensor noise to virtual streams.
    pub apply_noise: bool,
    pub domain_shift: Option<DomainShift>,
}

impl Default for SynthStageConfig {
    fn default() -> Self {
        Self {
            placements: vec!["wrist_right".into(), "waist_chest".into()],
            signal: SynthConfig::default(),
            noise: NoiseParams::default(),
            apply_noise: false,
            domain_shift: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistmapStageConfig {
    /// A fitted map applied to every virtual stream; mapped copies are
    /// written next to the raw ones.
    pub map: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default = "pipeline_smooth")]
    pub smooth: SmoothConfig,
    #[serde(default)]
    pub calib: CalibConfig,
    #[serde(default)]
    pub ego: EgoConfig,
    #[serde(default)]
    pub synth: SynthStageConfig,
    #[serde(default)]
    pub distmap: DistmapStageConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Keypoint smoothing inside the pipeline. The smoothed keypoints drive
/// PnP, whose translation feeds straight into the synthesized
/// acceleration, so the process noise must admit limb-speed image motion
/// (hundreds to thousands of px/s²); the stand-alone smoother default is
/// far stiffer.
fn pipeline_smooth() -> SmoothConfig {
    SmoothConfig {
        accel_sigma: 10_000.0,
        ..SmoothConfig::default()
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            workers: 0,
            ingest: IngestConfig::default(),
            tracker: TrackerConfig::default(),
            filter: FilterConfig::default(),
            smooth: pipeline_smooth(),
            calib: CalibConfig::default(),
            ego: EgoConfig::default(),
            synth: SynthStageConfig::default(),
            distmap: DistmapStageConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), PipelineError> {
    if ok {
        Ok(())
    } else {
        Err(PipelineError::Config(msg()))
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str, source: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| PipelineError::Config(format!("{source}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Range checks for every tunable.
    pub fn validate(&self) -> Result<(), PipelineError> {
        check(self.version == CONFIG_VERSION, || {
            format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )
        })?;
        check(self.ingest.n_joints == 17, || {
            format!(
                "ingest.n_joints must be 17 for the COCO skeleton, got {}",
                self.ingest.n_joints
            )
        })?;
        check((0.0..=1.0).contains(&self.ingest.min_confidence), || {
            "ingest.min_confidence must lie in [0, 1]".into()
        })?;
        check(
            self.tracker.iou_threshold > 0.0 && self.tracker.iou_threshold <= 1.0,
            || "tracker.iou_threshold must lie in (0, 1]".into(),
        )?;
        check(self.tracker.box_accel_sigma > 0.0, || {
            "tracker.box_accel_sigma must be positive".into()
        })?;
        check(self.filter.min_duration_s >= 0.0, || {
            "filter.min_duration_s must be non-negative".into()
        })?;
        check((0.0..1.0).contains(&self.filter.min_joint_fraction), || {
            "filter.min_joint_fraction must lie in [0, 1)".into()
        })?;
        check(
            self.smooth.accel_sigma > 0.0 && self.smooth.meas_sigma > 0.0,
            || "smooth.accel_sigma and smooth.meas_sigma must be positive".into(),
        )?;
        check(self.calib.solver.max_iterations > 0, || {
            "calib.solver.max_iterations must be >= 1".into()
        })?;
        check((0.0..=1.0).contains(&self.ego.icp.delta), || {
            "ego.icp.delta must lie in [0, 1]".into()
        })?;
        check(self.ego.icp.max_iterations > 0, || {
            "ego.icp.max_iterations must be >= 1".into()
        })?;
        check(!self.ego.icp.pyramid.is_empty(), || {
            "ego.icp.pyramid must not be empty".into()
        })?;
        check(self.ego.icp.normal_neighbors >= 3, || {
            "ego.icp.normal_neighbors must be >= 3".into()
        })?;
        check(self.ego.stride >= 1, || "ego.stride must be >= 1".into())?;
        check(self.ego.mask_margin >= 0.0, || {
            "ego.mask_margin must be non-negative".into()
        })?;
        check(!self.synth.placements.is_empty(), || {
            "synth.placements must not be empty".into()
        })?;
        for p in &self.synth.placements {
            SensorPlacement::named(p)
                .map_err(|e| PipelineError::Config(format!("synth.placements: {e}")))?;
        }
        let mut uniq = self.synth.placements.clone();
        uniq.sort();
        uniq.dedup();
        check(uniq.len() == self.synth.placements.len(), || {
            "synth.placements contains duplicates".into()
        })?;
        check(self.synth.signal.field.norm() > 0.0, || {
            "synth.signal.field must be non-zero".into()
        })?;
        if let Some(r) = self.synth.signal.output_rate {
            check(r > 0.0 && r.is_finite(), || {
                "synth.signal.output_rate must be positive".into()
            })?;
        }
        let e = &self.eval;
        check(e.window_s > 0.0, || "eval.window_s must be positive".into())?;
        check((0.0..1.0).contains(&e.overlap), || {
            "eval.overlap must lie in [0, 1)".into()
        })?;
        check(e.n_components >= 1, || {
            "eval.n_components must be >= 1".into()
        })?;
        check(
            !e.trees_grid.is_empty() && !e.trees_grid.contains(&0),
            || "eval.trees_grid must be non-empty with values >= 1".into(),
        )?;
        check(
            !e.min_leaf_grid.is_empty() && !e.min_leaf_grid.contains(&0),
            || "eval.min_leaf_grid must be non-empty with values >= 1".into(),
        )?;
        check(e.z > 0.0, || "eval.z must be positive".into())?;
        check(e.mix_virtual_ratio >= 0.0, || {
            "eval.mix_virtual_ratio must be non-negative".into()
        })?;
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        crate::fingerprint(self)
    }

    /// Fingerprints of each stage's own settings, keyed by stage name.
    pub fn stage_fingerprints(&self) -> Vec<(&'static str, String)> {
        use crate::fingerprint as fp;
        vec![
            ("ingest", fp(&self.ingest)),
            ("tracker", fp(&self.tracker)),
            ("filter", fp(&self.filter)),
            ("smooth", fp(&self.smooth)),
            ("calib", fp(&self.calib)),
            ("ego", fp(&self.ego)),
            ("synth", fp(&(&self.synth, self.seed))),
            ("distmap", fp(&self.distmap)),
        ]
    }
}
