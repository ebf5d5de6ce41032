//! 2D keypoint ingest, multi-person tracking, filtering and smoothing.
//!
//! Detections arrive per frame without identities. [`build_tracks`]
//! associates them SORT-style (constant-velocity box prediction plus
//! Hungarian matching on IoU), [`filter_tracks`] drops sparse poses and short
//! tracks, and [`kalman_smooth`] fills gaps with a forward Kalman pass and a
//! backward RTS pass per joint coordinate.

pub mod hungarian;
pub mod kalman;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use kalman::{CvKalman1D, CvNoise};

pub use hungarian::max_weight_assignment;

/// COCO 17-joint layout used by default.
pub const COCO_JOINTS: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("I/O error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("detection has no present joints")]
    NoPresentJoints,
    #[error("track {0} has no frames")]
    EmptyTrack(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2D {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    pub present: bool,
}

impl Keypoint2D {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self {
            x,
            y,
            confidence,
            present: true,
        }
    }

    pub fn absent() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            confidence: 0.0,
            present: false,
        }
    }
}

/// One N-joint pose.
pub type Detection = Vec<Keypoint2D>;

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub clip_id: String,
    pub frame_index: u64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn expanded(&self, margin: f64) -> BBox {
        BBox::new(
            self.x_min - margin,
            self.y_min - margin,
            self.x_max + margin,
            self.y_max + margin,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Per-person keypoint time series over a contiguous frame range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonTrack {
    pub track_id: u64,
    pub clip_id: String,
    pub start_frame: u64,
    /// One pose per frame from `start_frame`; frames without a matched
    /// detection hold all-absent joints.
    pub keypoints: Vec<Detection>,
    pub fps: f64,
    /// Joints observed fewer than twice and filled with a constant.
    #[serde(default)]
    pub low_confidence_joints: Vec<usize>,
}

impl PersonTrack {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn end_frame(&self) -> u64 {
        self.start_frame + self.keypoints.len().saturating_sub(1) as u64
    }

    pub fn pose_at(&self, frame: u64) -> Option<&Detection> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.keypoints.get(i as usize))
    }

    pub fn duration_s(&self) -> f64 {
        self.keypoints.len().saturating_sub(1) as f64 / self.fps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub n_joints: usize,
    /// Joints with confidence below this are treated as absent.
    pub min_confidence: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            n_joints: 17,
            min_confidence: 0.1,
        }
    }
}

#[derive(Deserialize)]
struct FrameRecord {
    clip: String,
    frame: u64,
    people: Vec<PersonRecord>,
}

#[derive(Deserialize)]
struct PersonRecord {
    joints: Vec<[f64; 3]>,
}

/// Serialized form of one frame, as written by [`write_keypoint_line`].
#[derive(Serialize)]
struct FrameRecordOut<'a> {
    clip: &'a str,
    frame: u64,
    people: Vec<PersonRecordOut>,
}

#[derive(Serialize)]
struct PersonRecordOut {
    joints: Vec<[f64; 3]>,
}

/// Encode one frame as a keypoint JSONL line (no trailing newline).
pub fn write_keypoint_line(frame: &KeypointFrame) -> String {
    let rec = FrameRecordOut {
        clip: &frame.clip_id,
        frame: frame.frame_index,
        people: frame
            .detections
            .iter()
            .map(|d| PersonRecordOut {
                joints: d
                    .iter()
                    .map(|k| {
                        if k.present {
                            [k.x, k.y, k.confidence]
                        } else {
                            [0.0, 0.0, 0.0]
                        }
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string(&rec).expect("keypoint record serializes")
}

/// Parse a keypoint JSONL stream.
///
/// Frames are grouped by clip in order of first appearance and sorted by
/// frame index within a clip. A repeated `(clip, frame)` pair is an error.
pub fn parse_keypoint_stream<R: BufRead>(
    reader: R,
    cfg: &IngestConfig,
) -> Result<Vec<KeypointFrame>, TrackError> {
    let mut clip_order: Vec<String> = Vec::new();
    let mut by_clip: BTreeMap<String, Vec<(KeypointFrame, usize)>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| TrackError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| TrackError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut detections = Vec::with_capacity(rec.people.len());
        for (p, person) in rec.people.iter().enumerate() {
            if person.joints.len() != cfg.n_joints {
                return Err(TrackError::Parse {
                    line: line_no,
                    message: format!(
                        "person {p} has {} joints, expected {}",
                        person.joints.len(),
                        cfg.n_joints
                    ),
                });
            }
            let mut det = Vec::with_capacity(cfg.n_joints);
            for (j, &[x, y, c]) in person.joints.iter().enumerate() {
                if !(x.is_finite() && y.is_finite() && c.is_finite()) {
                    return Err(TrackError::Parse {
                        line: line_no,
                        message: format!("person {p} joint {j} is not finite"),
                    });
                }
                if !(0.0..=1.0).contains(&c) {
                    return Err(TrackError::Parse {
                        line: line_no,
                        message: format!("person {p} joint {j} confidence {c} outside [0,1]"),
                    });
                }
                det.push(if c < cfg.min_confidence {
                    Keypoint2D::absent()
                } else {
                    Keypoint2D::new(x, y, c)
                });
            }
            detections.push(det);
        }
        if !by_clip.contains_key(&rec.clip) {
            clip_order.push(rec.clip.clone());
        }
        by_clip.entry(rec.clip.clone()).or_default().push((
            KeypointFrame {
                clip_id: rec.clip,
                frame_index: rec.frame,
                detections,
            },
            line_no,
        ));
    }
    let mut out = Vec::new();
    for clip in clip_order {
        let mut frames = by_clip.remove(&clip).unwrap_or_default();
        frames.sort_by_key(|(f, _)| f.frame_index);
        for w in frames.windows(2) {
            if w[0].0.frame_index == w[1].0.frame_index {
                return Err(TrackError::Parse {
                    line: w[1].1,
                    message: format!("duplicate frame {} in clip {clip}", w[1].0.frame_index),
                });
            }
        }
        out.extend(frames.into_iter().map(|(f, _)| f));
    }
    Ok(out)
}

pub fn load_keypoint_stream(
    path: &Path,
    cfg: &IngestConfig,
) -> Result<Vec<KeypointFrame>, TrackError> {
    let file = File::open(path).map_err(|source| TrackError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_keypoint_stream(BufReader::new(file), cfg)
}

/// Tight box around the present joints.
pub fn keypoint_bbox(detection: &[Keypoint2D]) -> Result<BBox, TrackError> {
    let mut it = detection.iter().filter(|k| k.present);
    let first = it.next().ok_or(TrackError::NoPresentJoints)?;
    let init = BBox::new(first.x, first.y, first.x, first.y);
    Ok(it.fold(init, |b, k| {
        BBox::new(
            b.x_min.min(k.x),
            b.y_min.min(k.y),
            b.x_max.max(k.x),
            b.y_max.max(k.y),
        )
    }))
}

/// Intersection over union. Zero-area boxes always give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    /// `(track index, detection index)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Maximum-weight IoU matching, then gating of pairs below `iou_threshold`.
pub fn assign_tracks(prev_tracks: &[BBox], detections: &[BBox], iou_threshold: f64) -> Matching {
    let weights: Vec<Vec<f64>> = prev_tracks
        .iter()
        .map(|t| detections.iter().map(|d| iou(t, d)).collect())
        .collect();
    let raw = if detections.is_empty() {
        Vec::new()
    } else {
        max_weight_assignment(&weights)
    };
    let pairs: Vec<(usize, usize)> = raw
        .into_iter()
        .filter(|&(t, d)| weights[t][d] >= iou_threshold)
        .collect();
    let unmatched_tracks = (0..prev_tracks.len())
        .filter(|t| !pairs.iter().any(|p| p.0 == *t))
        .collect();
    let unmatched_detections = (0..detections.len())
        .filter(|d| !pairs.iter().any(|p| p.1 == *d))
        .collect();
    Matching {
        pairs,
        unmatched_tracks,
        unmatched_detections,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub iou_threshold: f64,
    /// A track survives at most this many consecutive unmatched frames.
    pub max_missed: u32,
    /// Process noise of the box-center predictor, px/s².
    pub box_accel_sigma: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            max_missed: 1,
            box_accel_sigma: 500.0,
        }
    }
}

struct LiveTrack {
    id: u64,
    start: u64,
    poses: Vec<Option<Detection>>,
    missed: u32,
    last_box: BBox,
    cx: CvKalman1D,
    cy: CvKalman1D,
}

impl LiveTrack {
    fn predicted_box(&self) -> BBox {
        let (w, h) = (
            self.last_box.x_max - self.last_box.x_min,
            self.last_box.y_max - self.last_box.y_min,
        );
        let (x, y) = (self.cx.position(), self.cy.position());
        BBox::new(x - 0.5 * w, y - 0.5 * h, x + 0.5 * w, y + 0.5 * h)
    }

    fn finish(mut self, clip: &str, fps: f64, n_joints: usize) -> PersonTrack {
        while matches!(self.poses.last(), Some(None)) {
            self.poses.pop();
        }
        PersonTrack {
            track_id: self.id,
            clip_id: clip.to_string(),
            start_frame: self.start,
            keypoints: self
                .poses
                .into_iter()
                .map(|p| p.unwrap_or_else(|| vec![Keypoint2D::absent(); n_joints]))
                .collect(),
            fps,
            low_confidence_joints: Vec::new(),
        }
    }
}

/// SORT-style association of per-frame detections into tracks.
///
/// Frames must be sorted by clip then frame index (as returned by
/// [`load_keypoint_stream`]). Track ids are assigned in creation order,
/// starting at 0 for each clip. Missing frame indices count as frames with
/// no detections.
pub fn build_tracks(frames: &[KeypointFrame], fps: f64, cfg: &TrackerConfig) -> Vec<PersonTrack> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < frames.len() {
        let clip = &frames[start].clip_id;
        let end = frames[start..]
            .iter()
            .position(|f| &f.clip_id != clip)
            .map_or(frames.len(), |p| start + p);
        out.extend(track_clip(&frames[start..end], fps, cfg));
        start = end;
    }
    out
}

fn track_clip(frames: &[KeypointFrame], fps: f64, cfg: &TrackerConfig) -> Vec<PersonTrack> {
    let Some(first) = frames.first() else {
        return Vec::new();
    };
    let clip = first.clip_id.clone();
    let n_joints = frames
        .iter()
        .flat_map(|f| f.detections.first())
        .map(|d| d.len())
        .next()
        .unwrap_or(0);
    let dt = 1.0 / fps;
    let noise = CvNoise {
        accel_sigma: cfg.box_accel_sigma,
        meas_sigma: 2.0,
    };
    let mut live: Vec<LiveTrack> = Vec::new();
    let mut done: Vec<PersonTrack> = Vec::new();
    let mut next_id = 0u64;
    let mut prev_frame: Option<u64> = None;

    for frame in frames {
        // Advance through skipped frame indices as empty frames.
        let steps = prev_frame.map_or(1, |p| frame.frame_index.saturating_sub(p).max(1));
        for step in 0..steps {
            let is_current = step + 1 == steps;
            for t in live.iter_mut() {
                if prev_frame.is_some() {
                    t.cx.predict(dt);
                    t.cy.predict(dt);
                }
                if !is_current {
                    t.poses.push(None);
                    t.missed += 1;
                }
            }
            if !is_current {
                retire(&mut live, &mut done, cfg.max_missed, &clip, fps, n_joints);
            }
        }
        prev_frame = Some(frame.frame_index);

        let det_boxes: Vec<(usize, BBox)> = frame
            .detections
            .iter()
            .enumerate()
            .filter_map(|(i, d)| keypoint_bbox(d).ok().map(|b| (i, b)))
            .collect();
        let track_boxes: Vec<BBox> = live.iter().map(|t| t.predicted_box()).collect();
        let boxes: Vec<BBox> = det_boxes.iter().map(|(_, b)| *b).collect();
        let m = assign_tracks(&track_boxes, &boxes, cfg.iou_threshold);

        for &(ti, di) in &m.pairs {
            let (orig, b) = det_boxes[di];
            let t = &mut live[ti];
            let (cx, cy) = b.center();
            t.cx.update(cx);
            t.cy.update(cy);
            t.last_box = b;
            t.missed = 0;
            t.poses.push(Some(frame.detections[orig].clone()));
        }
        for &ti in &m.unmatched_tracks {
            live[ti].missed += 1;
            live[ti].poses.push(None);
        }
        retire(&mut live, &mut done, cfg.max_missed, &clip, fps, n_joints);
        for &di in &m.unmatched_detections {
            let (orig, b) = det_boxes[di];
            let (cx, cy) = b.center();
            live.push(LiveTrack {
                id: next_id,
                start: frame.frame_index,
                poses: vec![Some(frame.detections[orig].clone())],
                missed: 0,
                last_box: b,
                cx: CvKalman1D::from_measurement(cx, 200.0, noise),
                cy: CvKalman1D::from_measurement(cy, 200.0, noise),
            });
            next_id += 1;
        }
    }
    done.extend(live.into_iter().map(|t| t.finish(&clip, fps, n_joints)));
    done.sort_by_key(|t| t.track_id);
    done
}

fn retire(
    live: &mut Vec<LiveTrack>,
    done: &mut Vec<PersonTrack>,
    max_missed: u32,
    clip: &str,
    fps: f64,
    n_joints: usize,
) {
    let mut i = 0;
    while i < live.len() {
        if live[i].missed > max_missed {
            done.push(live.remove(i).finish(clip, fps, n_joints));
        } else {
            i += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub min_duration_s: f64,
    /// Poses whose present-joint fraction is at or below this are removed.
    pub min_joint_fraction: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_duration_s: 1.0,
            min_joint_fraction: 0.5,
        }
    }
}

/// Remove sparse poses, trim empty ends and drop short tracks.
///
/// Duration is the time span from the first to the last frame,
/// `(frames − 1) / fps`.
pub fn filter_tracks(tracks: &[PersonTrack], cfg: &FilterConfig) -> Vec<PersonTrack> {
    tracks
        .iter()
        .filter_map(|t| {
            let mut kp: Vec<Detection> = t
                .keypoints
                .iter()
                .map(|pose| {
                    let present = pose.iter().filter(|k| k.present).count();
                    if pose.is_empty()
                        || present as f64 / pose.len() as f64 <= cfg.min_joint_fraction
                    {
                        vec![Keypoint2D::absent(); pose.len()]
                    } else {
                        pose.clone()
                    }
                })
                .collect();
            let first = kp.iter().position(|p| p.iter().any(|k| k.present))?;
            let last = kp.iter().rposition(|p| p.iter().any(|k| k.present))?;
            kp.truncate(last + 1);
            kp.drain(..first);
            let span_frames = (kp.len() - 1) as f64;
            if span_frames < cfg.min_duration_s * t.fps - 1e-9 {
                return None;
            }
            Some(PersonTrack {
                start_frame: t.start_frame + first as u64,
                keypoints: kp,
                ..t.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothConfig {
    /// Process noise, px/s².
    pub accel_sigma: f64,
    /// Measurement noise, px.
    pub meas_sigma: f64,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self {
            accel_sigma: 10.0,
            meas_sigma: 2.0,
        }
    }
}

/// Fill and smooth every joint over the track's frame range.
///
/// Joints observed at least twice go through a constant-velocity Kalman
/// filter and RTS smoother per coordinate. A joint observed once is held at
/// that value; a joint never observed follows the centroid of the other
/// joints. Both cases are listed in `low_confidence_joints`. Filled samples
/// carry confidence 0.
pub fn kalman_smooth(track: &PersonTrack, cfg: &SmoothConfig) -> Result<PersonTrack, TrackError> {
    if track.keypoints.is_empty() {
        return Err(TrackError::EmptyTrack(track.track_id));
    }
    let n_frames = track.keypoints.len();
    let n_joints = track.keypoints[0].len();
    let noise = CvNoise {
        accel_sigma: cfg.accel_sigma,
        meas_sigma: cfg.meas_sigma,
    };
    let dt = 1.0 / track.fps;
    let mut out: Vec<Detection> = track.keypoints.clone();
    let mut low = Vec::new();
    let mut unseen = Vec::new();

    for j in 0..n_joints {
        let xs: Vec<Option<f64>> = track
            .keypoints
            .iter()
            .map(|p| p[j].present.then_some(p[j].x))
            .collect();
        let ys: Vec<Option<f64>> = track
            .keypoints
            .iter()
            .map(|p| p[j].present.then_some(p[j].y))
            .collect();
        match (
            kalman::smooth_series(&xs, dt, noise),
            kalman::smooth_series(&ys, dt, noise),
        ) {
            (Some(sx), Some(sy)) => {
                for f in 0..n_frames {
                    let k = &mut out[f][j];
                    let conf = if k.present { k.confidence } else { 0.0 };
                    *k = Keypoint2D::new(sx[f], sy[f], conf);
                }
            }
            _ => {
                low.push(j);
                let seen = track.keypoints.iter().find(|p| p[j].present).map(|p| p[j]);
                match seen {
                    Some(k) => {
                        for pose in out.iter_mut() {
                            let conf = if pose[j].present {
                                pose[j].confidence
                            } else {
                                0.0
                            };
                            pose[j] = Keypoint2D::new(k.x, k.y, conf);
                        }
                    }
                    None => unseen.push(j),
                }
            }
        }
    }
    for pose in out.iter_mut() {
        let (sum, n) = pose
            .iter()
            .enumerate()
            .filter(|(j, k)| k.present && !unseen.contains(j))
            .fold(((0.0, 0.0), 0usize), |((sx, sy), n), (_, k)| {
                ((sx + k.x, sy + k.y), n + 1)
            });
        let (cx, cy) = if n > 0 {
            (sum.0 / n as f64, sum.1 / n as f64)
        } else {
            (0.0, 0.0)
        };
        for &j in &unseen {
            pose[j] = Keypoint2D::new(cx, cy, 0.0);
        }
    }
    Ok(PersonTrack {
        keypoints: out,
        low_confidence_joints: low,
        ..track.clone()
    })
}
