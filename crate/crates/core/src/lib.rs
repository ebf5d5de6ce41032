//! Virtual inertial sensor synthesis from tracked human motion.
//!
//! The crate converts ingested 2D keypoint detections, lifted 3D poses,
//! per-frame camera intrinsics and depth maps into calibrated,
//! ego-motion-compensated 3D motion, synthesizes on-body IMU signals from
//! it, adapts their distribution to a target sensor domain and evaluates
//! activity classifiers trained on virtual, real and mixed data.
//!
//! Module map:
//! - [`trackio`]: keypoint ingest, SORT-style association, filtering and
//!   Kalman/RTS smoothing.
//! - [`calib3d`]: intrinsics aggregation, PnP pose calibration and
//!   background-person pruning.
//! - [`egomotion`]: depth back-projection, foreground masking, colored ICP
//!   and world-frame track composition.
//! - [`imusynth`]: forward kinematics and accelerometer/gyroscope/magnetometer
//!   synthesis with a simple MEMS noise model.
//! - [`distmap`]: rank-transform distribution mapping and Frechet distance.
//! - [`harlab`]: windowing, ECDF features, random forests and the
//!   leave-one-subject-out evaluation protocols.
//! - [`pipeline`]: configuration, manifests, the synthetic scene generator
//!   and end-to-end orchestration.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib3d;
pub mod distmap;
pub mod egomotion;
pub mod geometry;
pub mod harlab;
pub mod imusynth;
pub mod par;
pub mod pipeline;
pub mod trackio;

pub use geometry::RigidTransform;

/// Hex SHA-256 of a value's JSON serialization. Struct fields serialize in
/// declaration order, so equal configurations give equal fingerprints.
pub fn fingerprint<T: serde::Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_vec(value).expect("configuration serializes to JSON");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
