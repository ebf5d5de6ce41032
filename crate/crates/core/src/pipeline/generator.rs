//! Synthetic scenes standing in for deep-model outputs.
//!
//! A parametric COCO-17 body performs one activity while a level pinhole
//! camera watches it from inside a textured box room. The generator writes
//! exact 2D keypoints, person-centered 3D poses, per-frame intrinsics,
//! optionally rendered background depth and color frames, ground truth
//! (world joints and camera path) and "real" IMU streams synthesized from
//! the ground truth with sensor noise.
//!
//! World frame: Z up, floor at `z = 0`. The camera sits at
//! `(0, −3.5, 1.2)` looking along +Y; camera axes are x right, y down,
//! z forward.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::SynthStageConfig;
use super::manifest::{ClipManifest, ManifestSet, MANIFEST_FILE};
use super::{write_atomic, PipelineError};
use crate::calib3d::{write_intrinsics_line, write_pose_line, CameraIntrinsics, Pose3D};
use crate::egomotion::io::{encode_depth, encode_ppm, frame_file_name};
use crate::egomotion::{DepthMap, MotionTrack3D, RgbFrame};
use crate::geometry::RigidTransform;
use crate::imusynth::io::{stream_file_name, write_stream, StreamManifest};
use crate::imusynth::{sensor_noise, synthesize, NoiseParams, Origin, SensorPlacement, Skeleton};
use crate::par;
use crate::trackio::{write_keypoint_line, Keypoint2D, KeypointFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Still,
    Walk,
    Run,
    Jump,
    ArmWave,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Still,
        Scenario::Walk,
        Scenario::Run,
        Scenario::Jump,
        Scenario::ArmWave,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Still => "still",
            Scenario::Walk => "walk",
            Scenario::Run => "run",
            Scenario::Jump => "jump",
            Scenario::ArmWave => "arm_wave",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMotion {
    /// Fixed camera.
    Static,
    /// Fixed position, sinusoidal yaw of ±20° with a 4 s period.
    Pan,
    /// Sideways dolly of ±0.8 m (8 s period) while yawing to keep the
    /// person centered.
    Follow,
}

impl CameraMotion {
    pub fn name(&self) -> &'static str {
        match self {
            CameraMotion::Static => "static",
            CameraMotion::Pan => "pan",
            CameraMotion::Follow => "follow",
        }
    }
}

impl fmt::Display for CameraMotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CameraMotion {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            CameraMotion::Static,
            CameraMotion::Pan,
            CameraMotion::Follow,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| PipelineError::Config(format!("unknown camera motion `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub scenarios: Vec<Scenario>,
    pub subjects: usize,
    pub duration_s: f64,
    pub fps: f64,
    pub camera: CameraMotion,
    /// Render depth and color frames. Moving cameras always render;
    /// static clips without frames are processed as fixed-camera clips.
    pub render_frames: bool,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Noise added to the ground-truth ("real") IMU streams.
    pub real_noise: NoiseParams,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![Scenario::Still, Scenario::Walk, Scenario::ArmWave],
            subjects: 3,
            duration_s: 10.0,
            fps: 30.0,
            camera: CameraMotion::Static,
            render_frames: false,
            width: 160,
            height: 120,
            focal: 110.0,
            real_noise: NoiseParams::default(),
            seed: 0,
        }
    }
}

/// Per-subject body proportions and movement style.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectParams {
    pub scale: f64,
    pub tempo: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// Yaw offset of stationary activities, radians.
    pub heading: f64,
}

impl SubjectParams {
    /// Deterministic parameters of subject `index` under `seed`.
    pub fn sample(seed: u64, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (index as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F),
        );
        Self {
            scale: rng.random_range(0.92..1.08),
            tempo: rng.random_range(0.9..1.1),
            amplitude: rng.random_range(0.85..1.15),
            phase: rng.random_range(0.0..2.0 * PI),
            heading: rng.random_range(-0.3..0.3),
        }
    }
}

/// Joint angles (radians) and root placement at one instant. Arrays are
/// `[left, right]`.
struct BodyState {
    root: Vector3<f64>,
    heading: f64,
    hip: [f64; 2],
    knee: [f64; 2],
    shoulder_flex: [f64; 2],
    shoulder_abd: [f64; 2],
    elbow: [f64; 2],
}

const CAMERA_POSITION: [f64; 3] = [0.0, -3.5, 1.2];
/// Center of the circle walked and run around.
const TRACK_CENTER: [f64; 2] = [0.0, 0.5];
/// Room bounds `[min, max]` per axis.
const ROOM: [[f64; 2]; 3] = [[-5.0, 5.0], [-6.0, 7.0], [0.0, 3.2]];

/// One subject performing one activity in front of one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    pub scenario: Scenario,
    pub subject: SubjectParams,
    pub camera: CameraMotion,
    pub intrinsics: CameraIntrinsics,
    pub width: u32,
    pub height: u32,
}

fn deg(d: f64) -> f64 {
    d.to_radians()
}

/// Smooth 0→1→0 pulse over one cycle.
fn pulse(g: f64) -> f64 {
    0.5 - 0.5 * g.cos()
}

impl Scene {
    pub fn new(
        scenario: Scenario,
        subject: SubjectParams,
        camera: CameraMotion,
        cfg: &GeneratorConfig,
    ) -> Self {
        Self {
            scenario,
            subject,
            camera,
            intrinsics: CameraIntrinsics::pinhole(
                cfg.focal,
                (cfg.width as f64 - 1.0) / 2.0,
                (cfg.height as f64 - 1.0) / 2.0,
            ),
            width: cfg.width,
            height: cfg.height,
        }
    }

    fn state(&self, t: f64) -> BodyState {
        let s = &self.subject;
        let pelvis = 0.95 * s.scale;
        let center = Vector3::new(TRACK_CENTER[0], TRACK_CENTER[1], pelvis);
        let facing_camera = PI + s.heading;
        let standing = BodyState {
            root: center,
            heading: facing_camera,
            hip: [0.0; 2],
            knee: [deg(3.0); 2],
            shoulder_flex: [0.0; 2],
            shoulder_abd: [deg(6.0); 2],
            elbow: [deg(8.0); 2],
        };
        let a = s.amplitude;
        match self.scenario {
            Scenario::Still => standing,
            Scenario::Walk | Scenario::Run => {
                let run = self.scenario == Scenario::Run;
                let (freq, radius, speed, bob) = if run {
                    (1.4, 1.5, 2.6, 0.05)
                } else {
                    (0.9, 1.2, 1.1, 0.02)
                };
                let (hip, knee0, knee, arm, elbow0) = if run {
                    (38.0, 20.0, 50.0, 35.0, 85.0)
                } else {
                    (22.0, 5.0, 35.0, 18.0, 20.0)
                };
                let g = 2.0 * PI * freq * s.tempo * t + s.phase;
                let theta = speed * s.tempo * t / radius + s.phase;
                BodyState {
                    root: Vector3::new(
                        center.x + radius * theta.cos(),
                        center.y + radius * theta.sin(),
                        pelvis + bob * a * (2.0 * g).cos(),
                    ),
                    heading: theta,
                    hip: [deg(hip * a) * g.sin(), -deg(hip * a) * g.sin()],
                    knee: [
                        deg(knee0 + knee * a * pulse(g - 1.0)),
                        deg(knee0 + knee * a * pulse(g + PI - 1.0)),
                    ],
                    shoulder_flex: [-deg(arm * a) * g.sin(), deg(arm * a) * g.sin()],
                    shoulder_abd: [deg(8.0); 2],
                    elbow: [deg(elbow0 + 8.0 * g.sin()), deg(elbow0 - 8.0 * g.sin())],
                }
            }
            Scenario::Jump => {
                let g = 2.0 * PI * 1.6 * s.tempo * t + s.phase;
                let crouch = pulse(g);
                BodyState {
                    root: center
                        + Vector3::new(0.0, 0.0, 0.15 * a * g.sin() - 0.08 * s.scale * crouch),
                    hip: [deg(25.0 * a) * crouch; 2],
                    knee: [deg(3.0 + 50.0 * a * crouch); 2],
                    shoulder_abd: [deg(20.0 + 60.0 * a * pulse(g + 0.6)); 2],
                    elbow: [deg(20.0); 2],
                    ..standing
                }
            }
            Scenario::ArmWave => {
                let g = 2.0 * PI * 1.2 * s.tempo * t + s.phase;
                BodyState {
                    shoulder_flex: [0.0, deg(10.0)],
                    shoulder_abd: [deg(6.0), deg(125.0 + 25.0 * a * g.sin())],
                    elbow: [deg(8.0), deg(30.0 + 20.0 * a * (g + 0.5).sin())],
                    ..standing
                }
            }
        }
    }

    /// World joint positions (COCO-17 order) at time `t`.
    pub fn joints_world(&self, t: f64) -> Vec<Vector3<f64>> {
        let b = self.state(t);
        let k = self.subject.scale;
        let fwd = Vector3::new(-b.heading.sin(), b.heading.cos(), 0.0);
        let up = Vector3::z();
        let right = fwd.cross(&up);
        let r = b.root;
        let mut j = vec![Vector3::zeros(); 17];
        j[0] = r + up * 0.68 * k + fwd * 0.10 * k;
        j[1] = r + up * 0.71 * k + fwd * 0.08 * k - right * 0.035 * k;
        j[2] = r + up * 0.71 * k + fwd * 0.08 * k + right * 0.035 * k;
        j[3] = r + up * 0.69 * k - right * 0.075 * k;
        j[4] = r + up * 0.69 * k + right * 0.075 * k;
        let sagittal = |angle: f64| -up * angle.cos() + fwd * angle.sin();
        for side in 0..2 {
            let out = if side == 0 { -right } else { right };
            let shoulder = r + up * 0.5 * k + out * 0.18 * k;
            let hip = r + out * 0.1 * k;
            let limb = |flex: f64, abd: f64| sagittal(flex) * abd.cos() + out * abd.sin();
            let elbow = shoulder + limb(b.shoulder_flex[side], b.shoulder_abd[side]) * 0.30 * k;
            let wrist = elbow
                + limb(b.shoulder_flex[side] + b.elbow[side], b.shoulder_abd[side]) * 0.27 * k;
            let knee = hip + sagittal(b.hip[side]) * 0.45 * k;
            let ankle = knee + sagittal(b.hip[side] - b.knee[side]) * 0.43 * k;
            j[5 + side] = shoulder;
            j[7 + side] = elbow;
            j[9 + side] = wrist;
            j[11 + side] = hip;
            j[13 + side] = knee;
            j[15 + side] = ankle;
        }
        j
    }

    /// Analytic second derivative of every joint position at `t`, by a
    /// fine central difference of the closed-form motion.
    pub fn joint_accelerations(&self, t: f64) -> Vec<Vector3<f64>> {
        let h = 1e-3;
        let (a, b, c) = (
            self.joints_world(t - h),
            self.joints_world(t),
            self.joints_world(t + h),
        );
        (0..a.len())
            .map(|i| (a[i] - 2.0 * b[i] + c[i]) / (h * h))
            .collect()
    }

    /// Mid-hip root of the ground-truth skeleton.
    pub fn root(&self, t: f64) -> Vector3<f64> {
        let j = self.joints_world(t);
        (j[11] + j[12]) / 2.0
    }

    /// World-from-camera transform at `t`.
    pub fn camera_pose(&self, t: f64) -> RigidTransform {
        let base = Vector3::from(CAMERA_POSITION);
        let (position, yaw) = match self.camera {
            CameraMotion::Static => (base, 0.0),
            CameraMotion::Pan => (base, deg(20.0) * (2.0 * PI * t / 4.0).sin()),
            CameraMotion::Follow => {
                let c = base + Vector3::new(0.8 * (2.0 * PI * t / 8.0).sin(), 0.0, 0.0);
                let d = self.root(t) - c;
                (c, (-d.x).atan2(d.y))
            }
        };
        RigidTransform::new(
            Rotation3::from_axis_angle(&Vector3::z_axis(), yaw) * level_camera(),
            position,
        )
    }

    /// Pixel coordinates of every joint at `t`.
    pub fn keypoints(&self, t: f64) -> Result<Vec<Vector2<f64>>, PipelineError> {
        let cam_from_world = self.camera_pose(t).inverse();
        self.joints_world(t)
            .iter()
            .map(|p| {
                self.intrinsics
                    .project(&cam_from_world.apply(p))
                    .map_err(|e| PipelineError::Data(format!("generator projection: {e}")))
            })
            .collect()
    }

    /// Ray-cast the empty room (the person is not rendered).
    pub fn render(&self, t: f64) -> (DepthMap, RgbFrame) {
        let pose = self.camera_pose(t);
        let intr = &self.intrinsics;
        let n = (self.width * self.height) as usize;
        let mut depth = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(3 * n);
        for v in 0..self.height {
            for u in 0..self.width {
                let dc = Vector3::new(
                    (u as f64 - intr.px) / intr.fx,
                    (v as f64 - intr.py) / intr.fy,
                    1.0,
                );
                let dw = pose.rotation * dc;
                let (mut best, mut axis) = (f64::INFINITY, 0);
                for k in 0..3 {
                    if dw[k].abs() < 1e-12 {
                        continue;
                    }
                    let bound = if dw[k] > 0.0 { ROOM[k][1] } else { ROOM[k][0] };
                    let tk = (bound - pose.translation[k]) / dw[k];
                    if tk > 0.0 && tk < best {
                        best = tk;
                        axis = k;
                    }
                }
                let hit = pose.translation + dw * best;
                depth.push(best as f32);
                data.extend_from_slice(&wall_color(&hit, axis));
            }
        }
        (
            DepthMap {
                width: self.width,
                height: self.height,
                depth,
            },
            RgbFrame {
                width: self.width,
                height: self.height,
                data,
            },
        )
    }
}

/// World-from-camera rotation of a level camera looking along +Y:
/// camera x → world X, camera y → world −Z, camera z → world Y.
pub fn level_camera() -> Rotation3<f64> {
    Rotation3::from_matrix_unchecked(Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0))
}

/// Smooth multi-frequency texture over the in-plane coordinates of the
/// face a ray hit.
fn wall_color(hit: &Vector3<f64>, axis: usize) -> [u8; 3] {
    let (a, b) = match axis {
        0 => (hit.y, hit.z),
        1 => (hit.x, hit.z),
        _ => (hit.x, hit.y),
    };
    let face = axis as f64 * 0.9;
    let c = |v: f64| v.clamp(0.0, 255.0).round() as u8;
    [
        c(128.0
            + 80.0 * (2.1 * a + 0.7 + face).sin() * (1.3 * b).cos()
            + 30.0 * (5.3 * b - a).sin()),
        c(128.0 + 70.0 * (1.7 * b + 1.1 * a + face).sin() + 30.0 * (4.1 * a).cos()),
        c(128.0 + 60.0 * (2.9 * a - 1.9 * b).cos() + 40.0 * (3.7 * b + face).sin()),
    ]
}

/// Ground truth written next to each clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub clip_id: String,
    pub scenario: Scenario,
    pub camera: CameraMotion,
    pub subject: String,
    pub fps: f64,
    pub subject_params: SubjectParams,
    /// `[frame][joint]` world positions.
    pub joints_world: Vec<Vec<Vector3<f64>>>,
    /// World-from-camera transform per frame.
    pub camera_path: Vec<RigidTransform>,
}

/// A clip to generate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec {
    pub subject_index: usize,
    pub scene: Scene,
}

impl ClipSpec {
    pub fn subject_id(&self) -> String {
        format!("s{:02}", self.subject_index + 1)
    }

    pub fn clip_id(&self) -> String {
        format!(
            "{}-{}-{}",
            self.subject_id(),
            self.scene.scenario,
            self.scene.camera
        )
    }
}

/// Every (subject, scenario) clip of a configuration, subject-major.
pub fn clip_specs(cfg: &GeneratorConfig) -> Vec<ClipSpec> {
    let mut out = Vec::new();
    for i in 0..cfg.subjects {
        let params = SubjectParams::sample(cfg.seed, i);
        for &sc in &cfg.scenarios {
            out.push(ClipSpec {
                subject_index: i,
                scene: Scene::new(sc, params, cfg.camera, cfg),
            });
        }
    }
    out
}

fn frame_count(cfg: &GeneratorConfig) -> u64 {
    (cfg.duration_s * cfg.fps).round() as u64
}

/// Ground-truth motion of a clip.
pub fn ground_truth(spec: &ClipSpec, cfg: &GeneratorConfig) -> GroundTruth {
    let frames = frame_count(cfg);
    let times = (0..frames).map(|f| f as f64 / cfg.fps);
    GroundTruth {
        clip_id: spec.clip_id(),
        scenario: spec.scene.scenario,
        camera: spec.scene.camera,
        subject: spec.subject_id(),
        fps: cfg.fps,
        subject_params: spec.scene.subject,
        joints_world: times.clone().map(|t| spec.scene.joints_world(t)).collect(),
        camera_path: times.map(|t| spec.scene.camera_pose(t)).collect(),
    }
}

/// Keypoint confidence written for every generated joint.
const KEYPOINT_CONFIDENCE: f64 = 0.95;

fn write_clip(
    spec: &ClipSpec,
    cfg: &GeneratorConfig,
    synth: &SynthStageConfig,
    out: &Path,
    fingerprint: &str,
) -> Result<ClipManifest, PipelineError> {
    let clip = spec.clip_id();
    let rel = Path::new("clips").join(&clip);
    let dir = out.join(&rel);
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    let truth = ground_truth(spec, cfg);
    let frames = truth.joints_world.len() as u64;

    let mut keypoints = String::new();
    let mut poses = String::new();
    let mut intrinsics = String::new();
    for f in 0..frames {
        let t = f as f64 / cfg.fps;
        let px = spec.scene.keypoints(t)?;
        let frame = KeypointFrame {
            clip_id: clip.clone(),
            frame_index: f,
            detections: vec![px
                .iter()
                .map(|p| Keypoint2D::new(p.x, p.y, KEYPOINT_CONFIDENCE))
                .collect()],
        };
        keypoints += &write_keypoint_line(&frame);
        keypoints.push('\n');
        let joints = &truth.joints_world[f as usize];
        let root = (joints[11] + joints[12]) / 2.0;
        let pose = Pose3D {
            track_id: 0,
            frame_index: f,
            joints: joints.iter().map(|j| j - root).collect(),
        };
        poses += &write_pose_line(&clip, &pose);
        poses.push('\n');
        intrinsics += &write_intrinsics_line(&clip, f, &spec.scene.intrinsics);
        intrinsics.push('\n');
    }
    write_atomic(&dir.join("keypoints.jsonl"), keypoints.as_bytes())?;
    write_atomic(&dir.join("poses3d.jsonl"), poses.as_bytes())?;
    write_atomic(&dir.join("intrinsics.jsonl"), intrinsics.as_bytes())?;

    let render = cfg.render_frames || spec.scene.camera != CameraMotion::Static;
    let (depth_dir, color_dir) = if render {
        let (d, c) = (dir.join("depth"), dir.join("color"));
        for p in [&d, &c] {
            std::fs::create_dir_all(p).map_err(|e| PipelineError::io(p, e))?;
        }
        let written = par::map_range(frames as usize, |f| -> Result<(), PipelineError> {
            let (depth, color) = spec.scene.render(f as f64 / cfg.fps);
            write_atomic(
                &d.join(frame_file_name(&clip, f as u64, "dmap")),
                &encode_depth(&depth),
            )?;
            let ppm = encode_ppm(&color).map_err(|e| PipelineError::Data(e.to_string()))?;
            write_atomic(&c.join(frame_file_name(&clip, f as u64, "ppm")), &ppm)
        });
        written.into_iter().collect::<Result<Vec<_>, _>>()?;
        (Some(rel.join("depth")), Some(rel.join("color")))
    } else {
        (None, None)
    };

    let mut truth_json = serde_json::to_vec(&truth).expect("ground truth serializes");
    truth_json.push(b'\n');
    let truth_dir = out.join("truth");
    std::fs::create_dir_all(&truth_dir).map_err(|e| PipelineError::io(&truth_dir, e))?;
    write_atomic(&truth_dir.join(format!("{clip}.json")), &truth_json)?;

    write_real_imu(spec, &truth, cfg, synth, out, fingerprint)?;

    Ok(ClipManifest {
        clip_id: clip,
        fps: cfg.fps,
        frames,
        label: spec.scene.scenario.name().to_string(),
        subject: spec.subject_id(),
        keypoints: rel.join("keypoints.jsonl"),
        poses: rel.join("poses3d.jsonl"),
        intrinsics: rel.join("intrinsics.jsonl"),
        depth_dir,
        color_dir,
    })
}

/// IMU streams synthesized from the ground-truth world motion with sensor
/// noise, written to `real/` with origin `real`.
fn write_real_imu(
    spec: &ClipSpec,
    truth: &GroundTruth,
    cfg: &GeneratorConfig,
    synth: &SynthStageConfig,
    out: &Path,
    fingerprint: &str,
) -> Result<(), PipelineError> {
    let skeleton = Skeleton::coco17();
    let track = MotionTrack3D {
        track_id: 0,
        clip_id: truth.clip_id.clone(),
        fps: cfg.fps,
        start_frame: 0,
        joints_world: truth.joints_world.clone(),
        joint_orientations: None,
        label: spec.scene.scenario.name().to_string(),
        subject: spec.subject_id(),
    };
    let real_dir = out.join("real");
    std::fs::create_dir_all(&real_dir).map_err(|e| PipelineError::io(&real_dir, e))?;
    for (pi, name) in synth.placements.iter().enumerate() {
        let placement = SensorPlacement::named(name)?;
        let clean = synthesize(&track, &skeleton, &placement, &synth.signal)?;
        let seed = stream_seed(cfg.seed, &truth.clip_id, 0, pi);
        let mut stream = sensor_noise(&clean, seed, &cfg.real_noise);
        stream.origin = Origin::Real;
        let extra = StreamManifest {
            clip: Some(truth.clip_id.clone()),
            track: Some(0),
            config_fingerprint: Some(fingerprint.to_string()),
            ..StreamManifest::from_stream(&stream)
        };
        write_stream(
            &real_dir.join(stream_file_name(&truth.clip_id, 0, name)),
            &stream,
            &extra,
        )?;
    }
    Ok(())
}

/// Noise seed of one stream, derived from the clip id, track and
/// placement index so that every stream draws independent noise.
pub fn stream_seed(seed: u64, clip: &str, track: u64, placement: usize) -> u64 {
    let mut h = seed ^ 0xCBF2_9CE4_8422_2325;
    for b in clip
        .bytes()
        .chain(track.to_le_bytes())
        .chain((placement as u64).to_le_bytes())
    {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01B3);
    }
    h
}

/// Write a complete synthetic dataset under `out`: `manifest.json`,
/// `clips/<clip>/…`, `truth/<clip>.json` and `real/*.csv`.
pub fn generate_synthetic(
    cfg: &GeneratorConfig,
    synth: &SynthStageConfig,
    out: &Path,
) -> Result<ManifestSet, PipelineError> {
    if !(cfg.duration_s >= 2.0) {
        return Err(PipelineError::Config(format!(
            "duration must be at least 2 s, got {}",
            cfg.duration_s
        )));
    }
    if !(cfg.fps > 0.0) || cfg.width < 8 || cfg.height < 8 || !(cfg.focal > 0.0) {
        return Err(PipelineError::Config(
            "fps, image size and focal length must be positive".into(),
        ));
    }
    if cfg.subjects == 0 || cfg.scenarios.is_empty() {
        return Err(PipelineError::Config(
            "need at least one subject and one scenario".into(),
        ));
    }
    std::fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    let fingerprint = crate::fingerprint(&(cfg, synth));
    let specs = clip_specs(cfg);
    let clips = par::map(&specs, |s| write_clip(s, cfg, synth, out, &fingerprint))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let set = ManifestSet {
        clips,
        ..ManifestSet::default()
    };
    set.save(&out.join(MANIFEST_FILE))?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(sc: Scenario, cam: CameraMotion) -> Scene {
        Scene::new(
            sc,
            SubjectParams::sample(1, 0),
            cam,
            &GeneratorConfig::default(),
        )
    }

    #[test]
    fn static_still_keypoints_are_constant() {
        let s = scene(Scenario::Still, CameraMotion::Static);
        let a = s.keypoints(0.0).unwrap();
        for t in [0.5, 1.0, 2.7] {
            assert_eq!(s.keypoints(t).unwrap(), a);
        }
    }

    #[test]
    fn panning_moves_keypoints_but_not_the_body() {
        let s = scene(Scenario::Still, CameraMotion::Pan);
        assert_eq!(s.joints_world(0.0), s.joints_world(1.0));
        let shift = (s.keypoints(1.0).unwrap()[0] - s.keypoints(0.0).unwrap()[0]).norm();
        assert!(shift > 10.0, "shift {shift}");
    }

    #[test]
    fn bodies_are_plausible() {
        for sc in Scenario::ALL {
            let s = scene(sc, CameraMotion::Follow);
            for f in 0..90 {
                let t = f as f64 / 30.0;
                let j = s.joints_world(t);
                let thigh = (j[13] - j[11]).norm() / s.subject.scale;
                assert!((thigh - 0.45).abs() < 1e-9);
                assert!(j.iter().all(|p| p.z > -0.2 && p.z < 2.3), "{sc} {t}");
                let cam = s.camera_pose(t).inverse();
                assert!(j.iter().all(|p| cam.apply(p).z > 1.0), "{sc} {t}");
            }
        }
    }

    #[test]
    fn camera_is_level_and_looks_forward() {
        let s = scene(Scenario::Still, CameraMotion::Static);
        let c = s.camera_pose(0.0);
        assert!((c.rotation * Vector3::z() - Vector3::y()).norm() < 1e-12);
        assert!((c.rotation * Vector3::y() + Vector3::z()).norm() < 1e-12);
        let (depth, color) = s.render(0.0);
        let center = depth.get(s.width / 2, s.height / 2).unwrap();
        // Far wall is 10.5 m ahead of the camera.
        assert!((center - 10.5).abs() < 0.2, "{center}");
        assert_eq!(color.data.len(), (3 * s.width * s.height) as usize);
    }

    #[test]
    fn analytic_acceleration_matches_known_motion() {
        let s = scene(Scenario::Still, CameraMotion::Static);
        for a in s.joint_accelerations(1.0) {
            assert!(a.norm() < 1e-6);
        }
        let w = scene(Scenario::Walk, CameraMotion::Static);
        let acc = w.joint_accelerations(0.5);
        assert!(acc.iter().any(|a| a.norm() > 0.5));
    }
}
