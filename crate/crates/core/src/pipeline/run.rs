//! Per-clip processing and the batch runner.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DomainShift, PipelineConfig};
use super::generator::{level_camera, stream_seed};
use super::manifest::ClipManifest;
use super::{write_atomic, PipelineError};
use crate::calib3d::{
    aggregate_intrinsics, calibrate_track, load_intrinsics, load_poses, prune_background,
    CalibratedPose, CameraIntrinsics, Pose3D,
};
use crate::distmap::{apply_to_stream, DistributionMap};
use crate::egomotion::io::{frame_file_name, read_depth, read_ppm};
use crate::egomotion::{
    backproject, colored_icp, compose_track, estimate_normals, mask_foreground, MotionTrack3D,
    TrackMeta,
};
use crate::geometry::RigidTransform;
use crate::imusynth::io::{stream_file_name, write_stream, StreamManifest};
use crate::imusynth::{
    ensure_orientations, sensor_noise, synthesize, ImuStream, SensorPlacement, Skeleton,
};
use crate::par;
use crate::trackio::{
    build_tracks, filter_tracks, kalman_smooth, keypoint_bbox, load_keypoint_stream, BBox,
    KeypointFrame,
};

/// How a clip's camera motion was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EgoMode {
    /// No depth or color frames: the camera is taken as fixed.
    Static,
    /// Colored ICP between consecutive frames.
    Icp,
}

/// Everything computed for one clip.
#[derive(Debug, Clone)]
pub struct ProcessedClip {
    pub clip_id: String,
    pub intrinsics: CameraIntrinsics,
    /// Tracks that survived filtering, before background pruning.
    pub tracks_found: usize,
    /// Calibrated camera-frame poses of the retained tracks.
    pub calibrated: Vec<(u64, Vec<CalibratedPose>)>,
    /// Per-frame ego-motion increments from frame 0 (`ego[0]` identity).
    pub ego: Vec<RigidTransform>,
    pub ego_mode: EgoMode,
    /// World-frame (Z-up) motion with joint orientations.
    pub tracks: Vec<MotionTrack3D>,
    /// `(track, stream)` in track-then-placement order.
    pub streams: Vec<(u64, ImuStream)>,
    pub warnings: Vec<String>,
}

fn stage<E: std::fmt::Display>(name: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage: name,
        detail: e.to_string(),
    }
}

fn frame_boxes(frames: &[KeypointFrame]) -> BTreeMap<u64, Vec<BBox>> {
    frames
        .iter()
        .map(|f| {
            let boxes = f
                .detections
                .iter()
                .filter_map(|d| keypoint_bbox(d).ok())
                .collect();
            (f.frame_index, boxes)
        })
        .collect()
}

/// Ego-motion increments for frames `0..frames` from depth and color
/// files, masking every detected person.
fn estimate_ego(
    clip: &ClipManifest,
    frames: u64,
    intr: &CameraIntrinsics,
    boxes: &BTreeMap<u64, Vec<BBox>>,
    cfg: &PipelineConfig,
) -> Result<(Vec<RigidTransform>, Vec<String>), PipelineError> {
    let (Some(ddir), Some(cdir)) = (&clip.depth_dir, &clip.color_dir) else {
        unreachable!("checked by caller");
    };
    let load = |f: u64| -> Result<_, PipelineError> {
        let depth = read_depth(&ddir.join(frame_file_name(&clip.clip_id, f, "dmap")))
            .map_err(stage("egomotion"))?;
        let color = read_ppm(&cdir.join(frame_file_name(&clip.clip_id, f, "ppm")))
            .map_err(stage("egomotion"))?;
        Ok((depth, color))
    };
    let none = Vec::new();
    let cloud = |f: u64, depth: &_, color: &_| -> Result<_, PipelineError> {
        let crate::egomotion::DepthMap { width, height, .. } = depth;
        let mask = mask_foreground(
            *width,
            *height,
            boxes.get(&f).unwrap_or(&none),
            cfg.ego.mask_margin,
        );
        backproject(depth, color, intr, cfg.ego.stride, Some(&mask)).map_err(stage("egomotion"))
    };
    let steps = par::map_range(
        frames.saturating_sub(1) as usize,
        |i| -> Result<(RigidTransform, Option<String>), PipelineError> {
            let t = i as u64 + 1;
            let (d0, c0) = load(t - 1)?;
            let (d1, c1) = load(t)?;
            let same = d0.width == d1.width
                && d0.height == d1.height
                && c0.data == c1.data
                && d0
                    .depth
                    .iter()
                    .zip(&d1.depth)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if same {
                return Ok((RigidTransform::identity(), None));
            }
            let target = cloud(t - 1, &d0, &c0)?;
            let source = cloud(t, &d1, &c1)?;
            let k = cfg
                .ego
                .icp
                .normal_neighbors
                .min(target.len().saturating_sub(1))
                .max(3);
            let icp =
                estimate_normals(&target, k).and_then(|tn| colored_icp(&source, &tn, &cfg.ego.icp));
            match icp {
                Ok(r) => Ok((r.transform, None)),
                Err(e) => Ok((
                    RigidTransform::identity(),
                    Some(format!(
                        "frame {t}: ICP failed ({e}); assuming no camera motion"
                    )),
                )),
            }
        },
    );
    let mut ego = vec![RigidTransform::identity()];
    let mut warnings = Vec::new();
    for s in steps {
        let (t, w) = s?;
        ego.push(t);
        warnings.extend(w);
    }
    Ok((ego, warnings))
}

fn shift(stream: &mut ImuStream, s: &DomainShift) {
    for a in stream.accel.iter_mut() {
        *a = a.map(|v| s.accel_gain * v + s.accel_offset);
    }
    for g in stream.gyro.iter_mut() {
        *g = g.map(|v| s.gyro_gain * v + s.gyro_offset);
    }
}

/// Run every stage on one clip.
pub fn process_clip(
    clip: &ClipManifest,
    cfg: &PipelineConfig,
) -> Result<ProcessedClip, PipelineError> {
    let mut warnings = Vec::new();

    let frames: Vec<KeypointFrame> = load_keypoint_stream(&clip.keypoints, &cfg.ingest)
        .map_err(stage("ingest"))?
        .into_iter()
        .filter(|f| f.clip_id == clip.clip_id)
        .collect();
    let tracks = filter_tracks(&build_tracks(&frames, clip.fps, &cfg.tracker), &cfg.filter);
    let smoothed = tracks
        .iter()
        .map(|t| kalman_smooth(t, &cfg.smooth))
        .collect::<Result<Vec<_>, _>>()
        .map_err(stage("smooth"))?;

    let intr_records: Vec<CameraIntrinsics> = load_intrinsics(&clip.intrinsics)
        .map_err(stage("calib"))?
        .into_iter()
        .filter(|(c, _, _)| *c == clip.clip_id)
        .map(|(_, _, i)| i)
        .collect();
    let intr = aggregate_intrinsics(&intr_records).map_err(stage("calib"))?;
    let mut poses: BTreeMap<u64, Vec<Pose3D>> = BTreeMap::new();
    for (c, p) in load_poses(&clip.poses, cfg.ingest.n_joints).map_err(stage("calib"))? {
        if c == clip.clip_id {
            poses.entry(p.track_id).or_default().push(p);
        }
    }

    let mut calibrated = Vec::new();
    for track in &smoothed {
        let mut own: Vec<Pose3D> = poses
            .get(&track.track_id)
            .map(|v| {
                v.iter()
                    .filter(|p| (track.start_frame..=track.end_frame()).contains(&p.frame_index))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        own.sort_by_key(|p| p.frame_index);
        own.dedup_by_key(|p| p.frame_index);
        if own.len() != track.len() {
            warnings.push(format!(
                "track {}: 3D poses cover {} of {} frames; track skipped",
                track.track_id,
                own.len(),
                track.len()
            ));
            continue;
        }
        let cal = calibrate_track(&own, track, &intr, &cfg.calib).map_err(stage("calib"))?;
        calibrated.push((track.track_id, track.start_frame, cal));
    }
    let joints: Vec<Vec<_>> = calibrated
        .iter()
        .map(|(_, _, c)| c.iter().map(|p| p.joints.clone()).collect())
        .collect();
    let kept = prune_background(&joints);
    let calibrated: Vec<_> = kept.into_iter().map(|i| calibrated[i].clone()).collect();

    let last_frame = calibrated
        .iter()
        .map(|(_, start, c)| start + c.len() as u64)
        .max()
        .unwrap_or(0);
    let (ego, ego_mode) = if clip.depth_dir.is_some() && last_frame > 0 {
        let (ego, w) = estimate_ego(clip, last_frame, &intr, &frame_boxes(&frames), cfg)?;
        warnings.extend(w);
        (ego, EgoMode::Icp)
    } else {
        if clip.depth_dir.is_none() {
            warnings.push("no depth/color frames; camera treated as fixed".into());
        }
        (
            vec![RigidTransform::identity(); last_frame as usize],
            EgoMode::Static,
        )
    };
    let world_from_cam = crate::egomotion::accumulate_ego(&ego);
    // Camera-0 coordinates to the Z-up world of a level camera.
    let up = RigidTransform::new(level_camera(), nalgebra::Vector3::zeros());

    let skeleton = Skeleton::coco17();
    let placements = cfg
        .synth
        .placements
        .iter()
        .map(|p| SensorPlacement::named(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut world_tracks = Vec::new();
    let mut streams = Vec::new();
    for (track_id, start, cal) in &calibrated {
        let s = *start as usize;
        let meta = TrackMeta {
            track_id: *track_id,
            clip_id: &clip.clip_id,
            fps: clip.fps,
            label: &clip.label,
            subject: &clip.subject,
        };
        let mut track =
            compose_track(cal, &ego[s..s + cal.len()], &meta).map_err(stage("egomotion"))?;
        let to_world = up.compose(&world_from_cam[s]);
        for frame in track.joints_world.iter_mut() {
            for p in frame.iter_mut() {
                *p = to_world.apply(p);
            }
        }
        ensure_orientations(&mut track, &skeleton).map_err(stage("imusynth"))?;
        for (pi, placement) in placements.iter().enumerate() {
            let mut stream = synthesize(&track, &skeleton, placement, &cfg.synth.signal)
                .map_err(stage("imusynth"))?;
            if let Some(d) = &cfg.synth.domain_shift {
                shift(&mut stream, d);
            }
            if cfg.synth.apply_noise {
                stream = sensor_noise(
                    &stream,
                    stream_seed(cfg.seed, &clip.clip_id, *track_id, pi),
                    &cfg.synth.noise,
                );
            }
            streams.push((*track_id, stream));
        }
        world_tracks.push(track);
    }
    Ok(ProcessedClip {
        clip_id: clip.clip_id.clone(),
        intrinsics: intr,
        tracks_found: smoothed.len(),
        calibrated: calibrated.into_iter().map(|(id, _, c)| (id, c)).collect(),
        ego,
        ego_mode,
        tracks: world_tracks,
        streams,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ClipStatus {
    Ok {
        tracks_found: usize,
        tracks_kept: usize,
        ego: EgoMode,
        outputs: Vec<String>,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    #[serde(flatten)]
    pub status: ClipStatus,
    pub warnings: Vec<String>,
}

/// Provenance log of one run. Contains no timestamps, so identical runs
/// produce identical logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_fingerprint: String,
    pub stage_fingerprints: BTreeMap<String, String>,
    pub clips: Vec<ClipRecord>,
    pub streams_written: usize,
    pub failed_clips: usize,
    pub warnings: usize,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failed_clips > 0 {
            super::exit::PARTIAL
        } else {
            super::exit::OK
        }
    }
}

pub const VIRTUAL_DIR: &str = "virtual";
pub const MAPPED_DIR: &str = "mapped";
pub const PROVENANCE_FILE: &str = "provenance.json";

fn write_clip_outputs(
    processed: &ProcessedClip,
    cfg: &PipelineConfig,
    map: Option<&DistributionMap>,
    out: &Path,
) -> Result<Vec<String>, PipelineError> {
    let fingerprint = cfg.fingerprint();
    let mut files = Vec::new();
    for (track, stream) in &processed.streams {
        let name = stream_file_name(&processed.clip_id, *track, &stream.placement);
        let extra = StreamManifest {
            clip: Some(processed.clip_id.clone()),
            track: Some(*track),
            config_fingerprint: Some(fingerprint.clone()),
            ..StreamManifest::from_stream(stream)
        };
        write_stream(&out.join(VIRTUAL_DIR).join(&name), stream, &extra)?;
        files.push(format!("{VIRTUAL_DIR}/{name}"));
        if let Some(m) = map {
            let mapped = apply_to_stream(m, stream).map_err(stage("distmap"))?;
            write_stream(&out.join(MAPPED_DIR).join(&name), &mapped, &extra)?;
            files.push(format!("{MAPPED_DIR}/{name}"));
        }
    }
    Ok(files)
}

/// Process every clip, writing `virtual/*.csv` (and `mapped/*.csv` when a
/// distribution map is configured) plus `provenance.json` under `out`.
/// Clips that fail are recorded and skipped.
pub fn run_pipeline(
    clips: &[ClipManifest],
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let map = match &cfg.distmap.map {
        Some(p) => {
            Some(DistributionMap::load(p).map_err(|e| PipelineError::Config(e.to_string()))?)
        }
        None => None,
    };
    for dir in [out.to_path_buf(), out.join(VIRTUAL_DIR)] {
        std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    }
    let records = par::with_workers(cfg.workers, || {
        par::map(clips, |clip| {
            let result = process_clip(clip, cfg).and_then(|p| {
                let files = write_clip_outputs(&p, cfg, map.as_ref(), out)?;
                Ok((p, files))
            });
            match result {
                Ok((p, outputs)) => {
                    for w in &p.warnings {
                        log::warn!("{}: {w}", clip.clip_id);
                    }
                    ClipRecord {
                        clip_id: clip.clip_id.clone(),
                        status: ClipStatus::Ok {
                            tracks_found: p.tracks_found,
                            tracks_kept: p.tracks.len(),
                            ego: p.ego_mode,
                            outputs,
                        },
                        warnings: p.warnings,
                    }
                }
                Err(e) => {
                    log::error!("{}: skipped: {e}", clip.clip_id);
                    ClipRecord {
                        clip_id: clip.clip_id.clone(),
                        status: ClipStatus::Failed {
                            error: e.to_string(),
                        },
                        warnings: Vec::new(),
                    }
                }
            }
        })
    });
    let failed = records
        .iter()
        .filter(|r| matches!(r.status, ClipStatus::Failed { .. }))
        .count();
    let streams = records
        .iter()
        .map(|r| match &r.status {
            ClipStatus::Ok { outputs, .. } => outputs
                .iter()
                .filter(|o| o.starts_with(VIRTUAL_DIR))
                .count(),
            ClipStatus::Failed { .. } => 0,
        })
        .sum();
    let summary = RunSummary {
        config_fingerprint: cfg.fingerprint(),
        stage_fingerprints: cfg
            .stage_fingerprints()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        warnings: records.iter().map(|r| r.warnings.len()).sum::<usize>() + failed,
        clips: records,
        streams_written: streams,
        failed_clips: failed,
    };
    let mut json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    json.push(b'\n');
    write_atomic(&out.join(PROVENANCE_FILE), &json)?;
    Ok(summary)
}

/// Paths of the virtual CSVs a run wrote.
pub fn virtual_outputs(summary: &RunSummary, out: &Path) -> Vec<PathBuf> {
    summary
        .clips
        .iter()
        .flat_map(|r| match &r.status {
            ClipStatus::Ok { outputs, .. } => outputs.clone(),
            ClipStatus::Failed { .. } => Vec::new(),
        })
        .filter(|o| o.starts_with(VIRTUAL_DIR))
        .map(|o| out.join(o))
        .collect()
}
