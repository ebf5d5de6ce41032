//! Clip manifests: one `manifest.json` per dataset listing every clip and
//! its artifacts, with paths relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipManifest {
    pub clip_id: String,
    pub fps: f64,
    pub frames: u64,
    pub label: String,
    pub subject: String,
    /// Keypoint JSONL.
    pub keypoints: PathBuf,
    /// 3D-pose JSONL.
    pub poses: PathBuf,
    /// Per-frame intrinsics JSONL.
    pub intrinsics: PathBuf,
    /// Directory of `<clip>_<frame:06>.dmap` files; absent for clips
    /// recorded with a fixed camera.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_dir: Option<PathBuf>,
    /// Directory of `<clip>_<frame:06>.ppm` files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSet {
    pub version: u32,
    pub clips: Vec<ClipManifest>,
}

impl Default for ManifestSet {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION,
            clips: Vec::new(),
        }
    }
}

impl ClipManifest {
    /// Copy with every path joined onto `root`.
    pub fn resolved(&self, root: &Path) -> ClipManifest {
        ClipManifest {
            keypoints: root.join(&self.keypoints),
            poses: root.join(&self.poses),
            intrinsics: root.join(&self.intrinsics),
            depth_dir: self.depth_dir.as_ref().map(|p| root.join(p)),
            color_dir: self.color_dir.as_ref().map(|p| root.join(p)),
            ..self.clone()
        }
    }

    fn validate(&self, file: &str) -> Result<(), PipelineError> {
        let err = |detail: String| {
            PipelineError::Data(format!("{file}: clip `{}`: {detail}", self.clip_id))
        };
        if self.clip_id.is_empty() || self.clip_id.contains(['/', '\\']) {
            return Err(err(
                "field `clip_id` must be a non-empty file-name-safe string".into(),
            ));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(err(format!(
                "field `fps` must be positive, got {}",
                self.fps
            )));
        }
        for (field, path) in [
            ("keypoints", Some(&self.keypoints)),
            ("poses", Some(&self.poses)),
            ("intrinsics", Some(&self.intrinsics)),
            ("depth_dir", self.depth_dir.as_ref()),
            ("color_dir", self.color_dir.as_ref()),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(err(format!(
                        "field `{field}`: {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        if self.depth_dir.is_some() != self.color_dir.is_some() {
            return Err(err(
                "`depth_dir` and `color_dir` must be given together".into()
            ));
        }
        Ok(())
    }
}

impl ManifestSet {
    /// Load and resolve a manifest; every referenced file must exist.
    pub fn load(path: &Path) -> Result<Vec<ClipManifest>, PipelineError> {
        let file = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let set: ManifestSet =
            serde_json::from_str(&text).map_err(|e| PipelineError::Data(format!("{file}: {e}")))?;
        if set.version != MANIFEST_VERSION {
            return Err(PipelineError::Data(format!(
                "{file}: field `version`: unsupported manifest version {}",
                set.version
            )));
        }
        let root = path.parent().unwrap_or(Path::new("."));
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(set.clips.len());
        for clip in &set.clips {
            if !seen.insert(clip.clip_id.clone()) {
                return Err(PipelineError::Data(format!(
                    "{file}: duplicate clip `{}`",
                    clip.clip_id
                )));
            }
            let r = clip.resolved(root);
            r.validate(&file)?;
            out.push(r);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let mut json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        json.push(b'\n');
        super::write_atomic(path, &json)
    }
}
