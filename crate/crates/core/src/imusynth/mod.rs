//! Forward kinematics and virtual accelerometer, gyroscope and
//! magnetometer synthesis.
//!
//! World frame: Z up, gravity `(0, 0, −9.81)`. Sensor samples are
//! expressed in the sensor frame, `Rᵀ·v` for a world vector `v` and sensor
//! orientation `R`.

pub mod io;
pub mod noise;
pub mod signals;
pub mod skeleton;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::egomotion::MotionTrack3D;

pub use noise::{sensor_noise, NoiseParams};
pub use signals::{
    accel_signal, default_field, gravity, gyro_signal, mag_signal, STANDARD_GRAVITY,
};
pub use skeleton::{
    forward_kinematics, world_kinematics, BodySite, SensorKinematics, SensorPlacement, Skeleton,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("unknown placement `{0}`")]
    UnknownPlacement(String),
    #[error("frame {frame}: expected {expected} joints, found {found}")]
    JointCount {
        frame: usize,
        expected: usize,
        found: usize,
    },
    #[error("track has no joint orientations; run forward kinematics first")]
    MissingOrientations,
    #[error("need at least {needed} samples, found {found}")]
    TooShort { needed: usize, found: usize },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("relative rotation after frame {frame} is a half turn; rate is ambiguous")]
    AmbiguousRotation { frame: usize },
    #[error("magnetic field must be non-zero")]
    ZeroField,
    #[error("rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {detail}")]
    Schema { file: String, detail: String },
    #[error("format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Virtual,
}

/// Tri-axial accelerometer (m/s²), gyroscope (rad/s) and unit
/// magnetometer samples at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuStream {
    pub rate: f64,
    pub accel: Vec<Vector3<f64>>,
    pub gyro: Vec<Vector3<f64>>,
    pub mag: Vec<Vector3<f64>>,
    pub placement: String,
    pub label: String,
    pub subject: String,
    pub origin: Origin,
}

impl ImuStream {
    pub fn len(&self) -> usize {
        self.accel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accel.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.rate
    }

    /// Nine channels of sample `i`: accel xyz, gyro xyz, mag xyz.
    pub fn sample(&self, i: usize) -> [f64; 9] {
        let (a, g, m) = (self.accel[i], self.gyro[i], self.mag[i]);
        [a.x, a.y, a.z, g.x, g.y, g.z, m.x, m.y, m.z]
    }

    /// Rebuild from nine-channel rows.
    pub fn set_sample(&mut self, i: usize, v: &[f64; 9]) {
        self.accel[i] = Vector3::new(v[0], v[1], v[2]);
        self.gyro[i] = Vector3::new(v[3], v[4], v[5]);
        self.mag[i] = Vector3::new(v[6], v[7], v[8]);
    }
}

fn lerp_series(series: &[Vector3<f64>], pos: f64) -> Vector3<f64> {
    let i = (pos.floor() as usize).min(series.len() - 1);
    if i + 1 >= series.len() {
        return series[series.len() - 1];
    }
    let f = pos - i as f64;
    series[i] * (1.0 - f) + series[i + 1] * f
}

/// Linear interpolation onto a uniform grid at `target_rate` starting at
/// the first sample; the magnetometer is renormalized.
pub fn resample(stream: &ImuStream, target_rate: f64) -> Result<ImuStream, SynthError> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(SynthError::InvalidRate(target_rate));
    }
    if (target_rate - stream.rate).abs() < 1e-12 || stream.len() < 2 {
        return Ok(ImuStream {
            rate: target_rate,
            ..stream.clone()
        });
    }
    let span = (stream.len() - 1) as f64 / stream.rate;
    let m = (span * target_rate + 1e-9).floor() as usize + 1;
    let pos = |k: usize| k as f64 / target_rate * stream.rate;
    let interp = |s: &[Vector3<f64>]| (0..m).map(|k| lerp_series(s, pos(k))).collect::<Vec<_>>();
    Ok(ImuStream {
        rate: target_rate,
        accel: interp(&stream.accel),
        gyro: interp(&stream.gyro),
        mag: interp(&stream.mag)
            .into_iter()
            .map(|v| v.try_normalize(1e-12).unwrap_or(v))
            .collect(),
        ..stream.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub gravity_on: bool,
    pub field: Vector3<f64>,
    /// Output rate in Hz; the track's frame rate when absent.
    pub output_rate: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            gravity_on: true,
            field: default_field(),
            output_rate: Some(30.0),
        }
    }
}

/// Fill `joint_orientations` by forward kinematics when missing.
pub fn ensure_orientations(
    track: &mut MotionTrack3D,
    skeleton: &Skeleton,
) -> Result<(), SynthError> {
    if track.joint_orientations.is_none() {
        track.joint_orientations = Some(forward_kinematics(track, skeleton)?);
    }
    Ok(())
}

/// Noise-free virtual IMU stream for one placement on one track.
pub fn synthesize(
    track: &MotionTrack3D,
    skeleton: &Skeleton,
    placement: &SensorPlacement,
    cfg: &SynthConfig,
) -> Result<ImuStream, SynthError> {
    let mut owned;
    let track = if track.joint_orientations.is_some() {
        track
    } else {
        owned = track.clone();
        ensure_orientations(&mut owned, skeleton)?;
        &owned
    };
    let kin = world_kinematics(track, skeleton, placement)?;
    let stream = ImuStream {
        rate: track.fps,
        accel: accel_signal(&kin.positions, &kin.orientations, track.fps, cfg.gravity_on)?,
        gyro: gyro_signal(&kin.orientations, track.fps)?,
        mag: mag_signal(&kin.orientations, &cfg.field)?,
        placement: placement.name.clone(),
        label: track.label.clone(),
        subject: track.subject.clone(),
        origin: Origin::Virtual,
    };
    match cfg.output_rate {
        Some(r) => resample(&stream, r),
        None => Ok(stream),
    }
}
