//! Camera intrinsics aggregation, PnP pose calibration and background
//! pruning.
//!
//! Distortion uses a one-parameter division model on normalized image
//! coordinates: a distorted radius `r_d` maps to the undistorted radius
//! `r_u = r_d / (1 + d·r_d²)`. Projection inverts this in closed form.

pub mod io;
pub mod pnp;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RigidTransform;
use crate::trackio::PersonTrack;

pub use io::{
    load_intrinsics, load_poses, parse_intrinsics, parse_poses, write_intrinsics_line,
    write_pose_line,
};
pub use pnp::{LmConfig, PnpSolution, ScaleMode};

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("no intrinsics to aggregate")]
    EmptyIntrinsics,
    #[error("intrinsics contain non-finite values")]
    NonFiniteIntrinsics,
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("point lies outside the valid domain of the distortion model")]
    OutsideDistortionDomain,
    #[error("need at least 4 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("correspondence count mismatch: {0} 2D vs {1} 3D")]
    LengthMismatch(usize, usize),
    #[error("3D points are degenerate (collinear)")]
    Degenerate,
    #[error("no initialization produced a valid solution")]
    NoValidInitialization,
    #[error("track has no frames that could be calibrated")]
    AllFramesFailed,
    #[error("pose sequence is empty")]
    EmptyPoses,
    #[error("I/O error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}, line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub px: f64,
    pub py: f64,
    pub d: f64,
}

impl CameraIntrinsics {
    pub fn pinhole(f: f64, px: f64, py: f64) -> Self {
        Self {
            fx: f,
            fy: f,
            px,
            py,
            d: 0.0,
        }
    }

    fn is_finite(&self) -> bool {
        [self.fx, self.fy, self.px, self.py, self.d]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Camera-frame point to pixel.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, CalibError> {
        if p.z <= 0.0 {
            return Err(CalibError::BehindCamera(p.z));
        }
        let xu = Vector2::new(p.x / p.z, p.y / p.z);
        let xd = distort_normalized(&xu, self.d)?;
        Ok(Vector2::new(
            self.fx * xd.x + self.px,
            self.fy * xd.y + self.py,
        ))
    }

    /// Pixel to undistorted normalized coordinates.
    pub fn undistort_pixel(&self, pix: &Vector2<f64>) -> Vector2<f64> {
        let xd = Vector2::new((pix.x - self.px) / self.fx, (pix.y - self.py) / self.fy);
        xd / (1.0 + self.d * xd.norm_squared())
    }

    /// Pixel plus depth to a camera-frame point. With `d = 0` this is
    /// `((x − px)·Z/fx, (y − py)·Z/fy, Z)`.
    pub fn backproject(&self, pix: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let xu = self.undistort_pixel(pix);
        Vector3::new(xu.x * depth, xu.y * depth, depth)
    }
}

/// Undistorted normalized coordinates to distorted ones.
pub fn distort_normalized(xu: &Vector2<f64>, d: f64) -> Result<Vector2<f64>, CalibError> {
    let ru = xu.norm();
    if d == 0.0 || ru == 0.0 {
        return Ok(*xu);
    }
    let disc = 1.0 - 4.0 * d * ru * ru;
    if disc < 0.0 {
        return Err(CalibError::OutsideDistortionDomain);
    }
    let rd = (1.0 - disc.sqrt()) / (2.0 * d * ru);
    Ok(xu * (rd / ru))
}

/// Field-wise mean of per-frame intrinsics estimates.
pub fn aggregate_intrinsics(
    per_frame: &[CameraIntrinsics],
) -> Result<CameraIntrinsics, CalibError> {
    if per_frame.is_empty() {
        return Err(CalibError::EmptyIntrinsics);
    }
    if per_frame.iter().any(|c| !c.is_finite()) {
        return Err(CalibError::NonFiniteIntrinsics);
    }
    let n = per_frame.len() as f64;
    let sum = per_frame.iter().fold([0.0; 5], |mut acc, c| {
        acc[0] += c.fx;
        acc[1] += c.fy;
        acc[2] += c.px;
        acc[3] += c.py;
        acc[4] += c.d;
        acc
    });
    Ok(CameraIntrinsics {
        fx: sum[0] / n,
        fy: sum[1] / n,
        px: sum[2] / n,
        py: sum[3] / n,
        d: sum[4] / n,
    })
}

/// Person-centered 3D pose for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub track_id: u64,
    pub frame_index: u64,
    pub joints: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Solved,
    NotConverged,
    Interpolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPose {
    pub frame_index: u64,
    /// Joints in camera coordinates, `R·p3 + T`.
    pub joints: Vec<Vector3<f64>>,
    pub transform: RigidTransform,
    pub scale: f64,
    pub reprojection_rmse: f64,
    pub status: FrameStatus,
}

/// Solve one frame. `p2` entries of `None` (absent joints) are skipped.
pub fn solve_pnp(
    p2: &[Option<Vector2<f64>>],
    p3: &[Vector3<f64>],
    intr: &CameraIntrinsics,
    init: Option<&RigidTransform>,
    scale: ScaleMode,
    cfg: &LmConfig,
) -> Result<CalibratedPose, CalibError> {
    if p2.len() != p3.len() {
        return Err(CalibError::LengthMismatch(p2.len(), p3.len()));
    }
    let (x2, x3): (Vec<_>, Vec<_>) = p2
        .iter()
        .zip(p3)
        .filter_map(|(a, b)| a.map(|a| (a, *b)))
        .unzip();
    let sol = pnp::solve(&x2, &x3, intr, init, scale, cfg)?;
    Ok(CalibratedPose {
        frame_index: 0,
        joints: p3.iter().map(|p| sol.transform.apply(p)).collect(),
        transform: sol.transform,
        scale: sol.scale,
        reprojection_rmse: sol.rmse,
        status: if sol.converged {
            FrameStatus::Solved
        } else {
            FrameStatus::NotConverged
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibConfig {
    pub solver: LmConfig,
    /// Estimate the image scale on the first solved frame; otherwise fix it at 1.
    pub estimate_scale: bool,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            solver: LmConfig::default(),
            estimate_scale: true,
        }
    }
}

fn reprojection_rmse(
    p2: &[Option<Vector2<f64>>],
    joints: &[Vector3<f64>],
    intr: &CameraIntrinsics,
    scale: f64,
) -> f64 {
    let (sum, n) = p2
        .iter()
        .zip(joints)
        .filter_map(|(a, q)| {
            let a = (*a)?;
            let m = intr.project(q).ok()? / scale;
            Some((a - m).norm_squared())
        })
        .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Calibrate every pose of a track, chaining each solve from the previous
/// frame. Frames that cannot be solved get a transform interpolated from
/// the nearest solved neighbours.
pub fn calibrate_track(
    poses: &[Pose3D],
    keypoints: &PersonTrack,
    intr: &CameraIntrinsics,
    cfg: &CalibConfig,
) -> Result<Vec<CalibratedPose>, CalibError> {
    if poses.is_empty() {
        return Err(CalibError::EmptyPoses);
    }
    let observations: Vec<Vec<Option<Vector2<f64>>>> = poses
        .iter()
        .map(|pose| match keypoints.pose_at(pose.frame_index) {
            Some(det) => det
                .iter()
                .take(pose.joints.len())
                .map(|k| k.present.then(|| Vector2::new(k.x, k.y)))
                .chain(std::iter::repeat(None))
                .take(pose.joints.len())
                .collect(),
            None => vec![None; pose.joints.len()],
        })
        .collect();

    let mut solved: Vec<Option<(RigidTransform, f64, FrameStatus)>> = vec![None; poses.len()];
    let mut scale: Option<f64> = None;
    let mut prev: Option<RigidTransform> = None;
    for (i, pose) in poses.iter().enumerate() {
        let mode = match scale {
            Some(s) => ScaleMode::Fixed(s),
            None if cfg.estimate_scale => ScaleMode::Estimate,
            None => ScaleMode::Fixed(1.0),
        };
        match solve_pnp(
            &observations[i],
            &pose.joints,
            intr,
            prev.as_ref(),
            mode,
            &cfg.solver,
        ) {
            Ok(sol) => {
                scale.get_or_insert(sol.scale);
                prev = Some(sol.transform);
                solved[i] = Some((sol.transform, sol.reprojection_rmse, sol.status));
            }
            Err(e) => log::debug!("frame {} of track {}: {e}", pose.frame_index, pose.track_id),
        }
    }
    let scale = scale.ok_or(CalibError::AllFramesFailed)?;

    let known: Vec<usize> = (0..poses.len()).filter(|&i| solved[i].is_some()).collect();
    let out = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let (transform, rmse, status) = match solved[i] {
                Some(s) => s,
                None => {
                    let after = known.partition_point(|&k| k < i);
                    let t = match (after.checked_sub(1).map(|b| known[b]), known.get(after)) {
                        (Some(a), Some(&b)) => {
                            let ta = solved[a].unwrap().0;
                            let tb = solved[b].unwrap().0;
                            ta.interpolate(&tb, (i - a) as f64 / (b - a) as f64)
                        }
                        (Some(a), None) => solved[a].unwrap().0,
                        (None, Some(&b)) => solved[b].unwrap().0,
                        (None, None) => unreachable!("at least one frame solved"),
                    };
                    let joints: Vec<_> = pose.joints.iter().map(|p| t.apply(p)).collect();
                    let rmse = reprojection_rmse(&observations[i], &joints, intr, scale);
                    (t, rmse, FrameStatus::Interpolated)
                }
            };
            CalibratedPose {
                frame_index: pose.frame_index,
                joints: pose.joints.iter().map(|p| transform.apply(p)).collect(),
                transform,
                scale,
                reprojection_rmse: rmse,
                status,
            }
        })
        .collect();
    Ok(out)
}

/// Sum over joints of the temporal variance of the joint position.
pub fn pose_variation(track: &[Vec<Vector3<f64>>]) -> f64 {
    let Some(first) = track.first() else {
        return 0.0;
    };
    let n = track.len() as f64;
    (0..first.len())
        .map(|j| {
            let mean = track.iter().map(|f| f[j]).sum::<Vector3<f64>>() / n;
            track
                .iter()
                .map(|f| (f[j] - mean).norm_squared())
                .sum::<f64>()
                / n
        })
        .sum()
}

/// Indices of tracks whose pose variation is at least the median.
pub fn prune_background(tracks: &[Vec<Vec<Vector3<f64>>>]) -> Vec<usize> {
    if tracks.len() <= 1 {
        return (0..tracks.len()).collect();
    }
    let var: Vec<f64> = tracks.iter().map(|t| pose_variation(t)).collect();
    let mut sorted = var.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    (0..tracks.len()).filter(|&i| var[i] >= median).collect()
}
