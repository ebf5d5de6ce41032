//! Depth back-projection, foreground masking, colored-ICP ego-motion and
//! composition of calibrated poses into world-frame motion.
//!
//! Ego-motion increments follow the ICP convention: `ego[t]` maps camera-t
//! coordinates into camera-(t−1) coordinates. The world frame is the
//! camera frame at the first frame of the clip, so the world-from-camera
//! transform accumulates as `W_t = W_{t−1} ∘ ego[t]`.

pub mod icp;
pub mod io;
pub mod spatial;

use std::path::Path;

use nalgebra::{Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib3d::{CalibratedPose, CameraIntrinsics};
use crate::geometry::RigidTransform;
use crate::trackio::BBox;

pub use icp::{colored_icp, estimate_normals, IcpConfig, IcpResult};

#[derive(Debug, Error)]
pub enum EgoError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("depth is {depth_w}x{depth_h} but color is {color_w}x{color_h}")]
    DimensionMismatch {
        depth_w: u32,
        depth_h: u32,
        color_w: u32,
        color_h: u32,
    },
    #[error("need at least {needed} points, found {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("target cloud has no normals")]
    MissingNormals,
    #[error("ICP failed with {correspondences} correspondences")]
    IcpFailed { correspondences: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("length mismatch: {0} calibrated poses vs {1} ego transforms")]
    LengthMismatch(usize, usize),
}

impl EgoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        EgoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Row-major depth in meters; NaN, non-finite or non-positive values are
/// invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f32>,
}

impl DepthMap {
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        let d = self.depth[(y * self.width + x) as usize];
        (d.is_finite() && d > 0.0).then_some(d as f64)
    }
}

/// 8-bit RGB, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbFrame {
    pub fn rgb(&self, x: u32, y: u32) -> [f64; 3] {
        let i = 3 * (y * self.width + x) as usize;
        [
            self.data[i] as f64 / 255.0,
            self.data[i + 1] as f64 / 255.0,
            self.data[i + 2] as f64 / 255.0,
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColoredPointCloud {
    pub points: Vec<Vector3<f64>>,
    /// RGB in [0, 1].
    pub colors: Vec<[f64; 3]>,
    pub normals: Option<Vec<Vector3<f64>>>,
    /// Source pixel of each point, when built from a depth map.
    pub pixels: Vec<(u32, u32)>,
}

impl ColoredPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform) -> ColoredPointCloud {
        ColoredPointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            colors: self.colors.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.rotation * n).collect()),
            pixels: self.pixels.clone(),
        }
    }
}

/// Per-pixel keep flags; `true` marks background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub width: u32,
    pub height: u32,
    pub keep: Vec<bool>,
}

impl PixelMask {
    pub fn keep(&self, x: u32, y: u32) -> bool {
        self.keep[(y * self.width + x) as usize]
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }
}

/// Mask out pixels inside any margin-expanded person box (bounds inclusive).
pub fn mask_foreground(width: u32, height: u32, bboxes: &[BBox], margin: f64) -> PixelMask {
    let mut keep = vec![true; (width * height) as usize];
    for b in bboxes.iter().map(|b| b.expanded(margin)) {
        let x0 = b.x_min.ceil().max(0.0) as i64;
        let y0 = b.y_min.ceil().max(0.0) as i64;
        let x1 = (b.x_max.floor() as i64).min(width as i64 - 1);
        let y1 = (b.y_max.floor() as i64).min(height as i64 - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                keep[(y as u32 * width + x as u32) as usize] = false;
            }
        }
    }
    PixelMask {
        width,
        height,
        keep,
    }
}

/// Back-project valid pixels on a `stride` grid into a colored cloud.
pub fn backproject(
    depth: &DepthMap,
    color: &RgbFrame,
    intr: &CameraIntrinsics,
    stride: u32,
    mask: Option<&PixelMask>,
) -> Result<ColoredPointCloud, EgoError> {
    if depth.width != color.width || depth.height != color.height {
        return Err(EgoError::DimensionMismatch {
            depth_w: depth.width,
            depth_h: depth.height,
            color_w: color.width,
            color_h: color.height,
        });
    }
    if let Some(m) = mask {
        if m.width != depth.width || m.height != depth.height {
            return Err(EgoError::InvalidParameter(
                "mask size differs from depth map".into(),
            ));
        }
    }
    if stride == 0 {
        return Err(EgoError::InvalidParameter("stride must be >= 1".into()));
    }
    let mut cloud = ColoredPointCloud::default();
    for y in (0..depth.height).step_by(stride as usize) {
        for x in (0..depth.width).step_by(stride as usize) {
            if mask.is_some_and(|m| !m.keep(x, y)) {
                continue;
            }
            let Some(z) = depth.get(x, y) else { continue };
            cloud
                .points
                .push(intr.backproject(&Vector2::new(x as f64, y as f64), z));
            cloud.colors.push(color.rgb(x, y));
            cloud.pixels.push((x, y));
        }
    }
    Ok(cloud)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTrack3D {
    pub track_id: u64,
    pub clip_id: String,
    pub fps: f64,
    pub start_frame: u64,
    /// `[frame][joint]`, meters.
    pub joints_world: Vec<Vec<Vector3<f64>>>,
    /// `[frame][joint]`, filled by forward kinematics.
    pub joint_orientations: Option<Vec<Vec<Rotation3<f64>>>>,
    pub label: String,
    pub subject: String,
}

impl MotionTrack3D {
    pub fn len(&self) -> usize {
        self.joints_world.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints_world.is_empty()
    }
}

/// Accumulate ego-motion increments into world-from-camera transforms.
/// `ego[0]` is ignored; the first frame defines the world.
pub fn accumulate_ego(ego: &[RigidTransform]) -> Vec<RigidTransform> {
    let mut out = Vec::with_capacity(ego.len());
    let mut w = RigidTransform::identity();
    for (t, e) in ego.iter().enumerate() {
        if t > 0 {
            w = w.compose(e);
            w.rotation = crate::geometry::renormalize(&w.rotation);
        }
        out.push(w);
    }
    out
}

pub struct TrackMeta<'a> {
    pub track_id: u64,
    pub clip_id: &'a str,
    pub fps: f64,
    pub label: &'a str,
    pub subject: &'a str,
}

/// World-frame joints `W_t · p_calib,t` for every frame.
pub fn compose_track(
    calibrated: &[CalibratedPose],
    ego: &[RigidTransform],
    meta: &TrackMeta,
) -> Result<MotionTrack3D, EgoError> {
    if calibrated.len() != ego.len() {
        return Err(EgoError::LengthMismatch(calibrated.len(), ego.len()));
    }
    let world = accumulate_ego(ego);
    Ok(MotionTrack3D {
        track_id: meta.track_id,
        clip_id: meta.clip_id.to_string(),
        fps: meta.fps,
        start_frame: calibrated.first().map_or(0, |c| c.frame_index),
        joints_world: calibrated
            .iter()
            .zip(&world)
            .map(|(c, w)| c.joints.iter().map(|p| w.apply(p)).collect())
            .collect(),
        joint_orientations: None,
        label: meta.label.to_string(),
        subject: meta.subject.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib3d::FrameStatus;

    fn flat(width: u32, height: u32, z: f32) -> (DepthMap, RgbFrame) {
        (
            DepthMap {
                width,
                height,
                depth: vec![z; (width * height) as usize],
            },
            RgbFrame {
                width,
                height,
                data: (0..width * height * 3).map(|i| (i % 251) as u8).collect(),
            },
        )
    }

    #[test]
    fn backproject_examples() {
        let intr = CameraIntrinsics::pinhole(100.0, 50.0, 50.0);
        let (d, c) = flat(200, 100, 2.0);
        let cloud = backproject(&d, &c, &intr, 1, None).unwrap();
        let at =
            |x: u32, y: u32| cloud.points[cloud.pixels.iter().position(|p| *p == (x, y)).unwrap()];
        assert_eq!(at(50, 50), Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(at(150, 50), Vector3::new(2.0, 0.0, 2.0));
        assert_eq!(cloud.colors[0], c.rgb(0, 0));

        let invalid = DepthMap {
            depth: vec![f32::NAN; 200 * 100],
            ..d.clone()
        };
        assert!(backproject(&invalid, &c, &intr, 1, None)
            .unwrap()
            .is_empty());
        let small = RgbFrame {
            width: 10,
            height: 10,
            data: vec![0; 300],
        };
        assert!(matches!(
            backproject(&d, &small, &intr, 1, None),
            Err(EgoError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn backproject_then_project_recovers_pixels() {
        let intr = CameraIntrinsics::pinhole(120.0, 40.0, 30.0);
        let (mut d, c) = flat(80, 60, 1.0);
        for (i, z) in d.depth.iter_mut().enumerate() {
            *z = 1.0 + (i % 17) as f32 * 0.25;
        }
        let cloud = backproject(&d, &c, &intr, 3, None).unwrap();
        for (p, px) in cloud.points.iter().zip(&cloud.pixels) {
            let uv = intr.project(p).unwrap();
            assert!((uv.x - px.0 as f64).abs() < 1e-9 && (uv.y - px.1 as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn mask_examples() {
        let m = mask_foreground(40, 30, &[], 0.0);
        assert_eq!(m.kept(), 1200);
        let m = mask_foreground(40, 30, &[BBox::new(-5.0, -5.0, 100.0, 100.0)], 0.0);
        assert_eq!(m.kept(), 0);
        let b = BBox::new(10.0, 5.0, 19.0, 14.0);
        let m = mask_foreground(40, 30, &[b], 0.0);
        let (d, c) = flat(40, 30, 3.0);
        let intr = CameraIntrinsics::pinhole(50.0, 20.0, 15.0);
        let stride = 2;
        let cloud = backproject(&d, &c, &intr, stride, Some(&m)).unwrap();
        let mut expected_removed = 0;
        for y in (0..30).step_by(2) {
            for x in (0..40).step_by(2) {
                if (10..=19).contains(&x) && (5..=14).contains(&y) {
                    expected_removed += 1;
                }
            }
        }
        assert_eq!(20 * 15 - cloud.len(), expected_removed);
    }

    fn calibrated(frames: &[Vec<Vector3<f64>>]) -> Vec<CalibratedPose> {
        frames
            .iter()
            .enumerate()
            .map(|(i, j)| CalibratedPose {
                frame_index: i as u64,
                joints: j.clone(),
                transform: RigidTransform::identity(),
                scale: 1.0,
                reprojection_rmse: 0.0,
                status: FrameStatus::Solved,
            })
            .collect()
    }

    fn meta() -> TrackMeta<'static> {
        TrackMeta {
            track_id: 0,
            clip_id: "c",
            fps: 30.0,
            label: "walk",
            subject: "s1",
        }
    }

    #[test]
    fn compose_identity_chain() {
        let frames: Vec<Vec<Vector3<f64>>> = (0..5)
            .map(|t| {
                vec![
                    Vector3::new(t as f64, 1.0, 4.0),
                    Vector3::new(0.0, 2.0, 5.0),
                ]
            })
            .collect();
        let ego = vec![RigidTransform::identity(); 5];
        let track = compose_track(&calibrated(&frames), &ego, &meta()).unwrap();
        assert_eq!(track.joints_world, frames);
        assert!(compose_track(&calibrated(&frames), &ego[..3], &meta()).is_err());
    }

    #[test]
    fn compose_cancels_camera_pan() {
        // Camera yaws by 0.02 rad per frame; a static world point drifts in
        // camera coordinates and is restored by the accumulated chain.
        let world_pt = Vector3::new(0.5, 0.2, 4.0);
        let step = RigidTransform::new(
            Rotation3::from_axis_angle(&Vector3::y_axis(), 0.02),
            Vector3::new(0.01, 0.0, 0.0),
        );
        let mut cam_from_world = RigidTransform::identity();
        let mut frames = Vec::new();
        let mut ego = Vec::new();
        for t in 0..30 {
            if t > 0 {
                cam_from_world = step.inverse().compose(&cam_from_world);
                ego.push(step);
            } else {
                ego.push(RigidTransform::identity());
            }
            frames.push(vec![cam_from_world.apply(&world_pt)]);
        }
        let track = compose_track(&calibrated(&frames), &ego, &meta()).unwrap();
        for f in &track.joints_world {
            assert!((f[0] - world_pt).norm() < 1e-9);
        }
        assert!((frames[29][0] - world_pt).norm() > 0.3);
    }
}
