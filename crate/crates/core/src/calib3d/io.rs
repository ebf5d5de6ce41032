//! 3D-pose and per-frame intrinsics JSONL files.
//!
//! Pose lines: `{"clip":"<id>","track":<id>,"frame":<int>,"joints":[[x,y,z],...]}`
//! with person-centered joints in meters. Intrinsics lines:
//! `{"clip":"<id>","frame":<int>,"fx":..,"fy":..,"px":..,"py":..,"d":..}`.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{CalibError, CameraIntrinsics, Pose3D};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRecord {
    clip: String,
    track: u64,
    frame: u64,
    joints: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntrinsicsRecord {
    clip: String,
    frame: u64,
    fx: f64,
    fy: f64,
    px: f64,
    py: f64,
    d: f64,
}

fn open(path: &Path) -> Result<BufReader<File>, CalibError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CalibError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Non-blank lines with their 1-based numbers.
fn lines<'a, R: BufRead + 'a>(
    reader: R,
    file: &'a str,
) -> impl Iterator<Item = Result<(usize, String), CalibError>> + 'a {
    reader
        .lines()
        .enumerate()
        .filter_map(move |(i, l)| match l {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(Ok((i + 1, l))),
            Err(e) => Some(Err(CalibError::Parse {
                file: file.to_string(),
                line: i + 1,
                message: e.to_string(),
            })),
        })
}

pub fn write_pose_line(clip: &str, pose: &Pose3D) -> String {
    let rec = PoseRecord {
        clip: clip.to_string(),
        track: pose.track_id,
        frame: pose.frame_index,
        joints: pose.joints.iter().map(|j| [j.x, j.y, j.z]).collect(),
    };
    serde_json::to_string(&rec).expect("pose record serializes")
}

/// Parse 3D poses, returned with their clip ids in file order. Every pose
/// must carry `n_joints` finite joints.
pub fn parse_poses<R: BufRead>(
    reader: R,
    file: &str,
    n_joints: usize,
) -> Result<Vec<(String, Pose3D)>, CalibError> {
    let mut out = Vec::new();
    for item in lines(reader, file) {
        let (line, text) = item?;
        let err = |message: String| CalibError::Parse {
            file: file.to_string(),
            line,
            message,
        };
        let rec: PoseRecord = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if rec.joints.len() != n_joints {
            return Err(err(format!(
                "field `joints`: expected {n_joints} joints, found {}",
                rec.joints.len()
            )));
        }
        if rec.joints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(err("field `joints`: non-finite coordinate".into()));
        }
        out.push((
            rec.clip,
            Pose3D {
                track_id: rec.track,
                frame_index: rec.frame,
                joints: rec
                    .joints
                    .iter()
                    .map(|j| Vector3::new(j[0], j[1], j[2]))
                    .collect(),
            },
        ));
    }
    Ok(out)
}

pub fn load_poses(path: &Path, n_joints: usize) -> Result<Vec<(String, Pose3D)>, CalibError> {
    parse_poses(open(path)?, &path.display().to_string(), n_joints)
}

pub fn write_intrinsics_line(clip: &str, frame: u64, c: &CameraIntrinsics) -> String {
    let rec = IntrinsicsRecord {
        clip: clip.to_string(),
        frame,
        fx: c.fx,
        fy: c.fy,
        px: c.px,
        py: c.py,
        d: c.d,
    };
    serde_json::to_string(&rec).expect("intrinsics record serializes")
}

/// Parse per-frame intrinsics as `(clip, frame, intrinsics)` in file order.
pub fn parse_intrinsics<R: BufRead>(
    reader: R,
    file: &str,
) -> Result<Vec<(String, u64, CameraIntrinsics)>, CalibError> {
    let mut out = Vec::new();
    for item in lines(reader, file) {
        let (line, text) = item?;
        let err = |message: String| CalibError::Parse {
            file: file.to_string(),
            line,
            message,
        };
        let r: IntrinsicsRecord = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let c = CameraIntrinsics {
            fx: r.fx,
            fy: r.fy,
            px: r.px,
            py: r.py,
            d: r.d,
        };
        if !c.is_finite() {
            return Err(err("non-finite intrinsics".into()));
        }
        if !(c.fx > 0.0 && c.fy > 0.0) {
            return Err(err(format!(
                "fields `fx`/`fy` must be positive, got {}/{}",
                c.fx, c.fy
            )));
        }
        out.push((r.clip, r.frame, c));
    }
    Ok(out)
}

pub fn load_intrinsics(path: &Path) -> Result<Vec<(String, u64, CameraIntrinsics)>, CalibError> {
    parse_intrinsics(open(path)?, &path.display().to_string())
}
