//! Skeleton definition, sensor placements and forward kinematics.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::egomotion::MotionTrack3D;
use crate::geometry::{minimal_rotation, renormalize};

/// A joint tree hanging off a virtual root ("pelvis") placed at the
/// midpoint of two lateral joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    /// `None` means the joint hangs directly off the root.
    pub parents: Vec<Option<usize>>,
    /// Rest-pose offset of each joint from its parent (or from the root).
    pub rest_offsets: Vec<Vector3<f64>>,
    /// `(left, right)` joints whose midpoint is the root and whose
    /// difference fixes the root's lateral axis.
    pub root_lateral: (usize, usize),
    /// `(left, right)` joints whose midpoint fixes the root's up axis.
    pub root_up: (usize, usize),
}

impl Skeleton {
    /// COCO-17 layout in a standing rest pose: Z up, facing +Y, the
    /// person's right along +X, root at the mid-hip.
    pub fn coco17() -> Self {
        let rest: [[f64; 3]; 17] = [
            [0.0, 0.10, 0.62],
            [-0.03, 0.08, 0.66],
            [0.03, 0.08, 0.66],
            [-0.07, 0.0, 0.64],
            [0.07, 0.0, 0.64],
            [-0.18, 0.0, 0.50],
            [0.18, 0.0, 0.50],
            [-0.18, 0.0, 0.22],
            [0.18, 0.0, 0.22],
            [-0.18, 0.0, -0.03],
            [0.18, 0.0, -0.03],
            [-0.10, 0.0, 0.0],
            [0.10, 0.0, 0.0],
            [-0.10, 0.0, -0.45],
            [0.10, 0.0, -0.45],
            [-0.10, 0.0, -0.88],
            [0.10, 0.0, -0.88],
        ];
        let parents = vec![
            None,
            Some(0),
            Some(0),
            Some(1),
            Some(2),
            None,
            None,
            Some(5),
            Some(6),
            Some(7),
            Some(8),
            None,
            None,
            Some(11),
            Some(12),
            Some(13),
            Some(14),
        ];
        let abs: Vec<Vector3<f64>> = rest.iter().map(|p| Vector3::from(*p)).collect();
        let rest_offsets = parents
            .iter()
            .zip(&abs)
            .map(|(p, a)| match p {
                Some(p) => a - abs[*p],
                None => *a,
            })
            .collect();
        Self {
            names: crate::trackio::COCO_JOINTS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            parents,
            rest_offsets,
            root_lateral: (11, 12),
            root_up: (5, 6),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Parent-before-child order; fails on cycles or bad indices.
    pub fn topological_order(&self) -> Result<Vec<usize>, SynthError> {
        let n = self.len();
        if self.parents.len() != n || self.rest_offsets.len() != n {
            return Err(SynthError::InvalidSkeleton("array lengths differ".into()));
        }
        let mut order = Vec::with_capacity(n);
        let mut placed = vec![false; n];
        while order.len() < n {
            let before = order.len();
            for j in 0..n {
                if placed[j] {
                    continue;
                }
                let ready = match self.parents[j] {
                    None => true,
                    Some(p) if p < n => placed[p],
                    Some(p) => {
                        return Err(SynthError::InvalidSkeleton(format!(
                            "joint {j} has parent {p}"
                        )))
                    }
                };
                if ready {
                    placed[j] = true;
                    order.push(j);
                }
            }
            if order.len() == before {
                return Err(SynthError::InvalidSkeleton(
                    "parent graph has a cycle".into(),
                ));
            }
        }
        Ok(order)
    }

    /// Absolute rest-pose joint positions with the root at the origin.
    pub fn rest_pose(&self) -> Vec<Vector3<f64>> {
        let mut out = vec![Vector3::zeros(); self.len()];
        for j in self.topological_order().expect("valid skeleton") {
            out[j] = match self.parents[j] {
                Some(p) => out[p] + self.rest_offsets[j],
                None => self.rest_offsets[j],
            };
        }
        out
    }

    /// Rigidly pose the skeleton: every bone takes rotation `bone_rot[j]`
    /// (world frame), the root sits at `root`.
    pub fn pose(
        &self,
        root: &Vector3<f64>,
        root_rot: &Rotation3<f64>,
        bone_rot: &[Rotation3<f64>],
    ) -> Vec<Vector3<f64>> {
        let mut out = vec![Vector3::zeros(); self.len()];
        for j in self.topological_order().expect("valid skeleton") {
            out[j] = match self.parents[j] {
                Some(p) => out[p] + bone_rot[j] * self.rest_offsets[j],
                None => root + root_rot * self.rest_offsets[j],
            };
        }
        out
    }

    pub fn root_position(&self, joints: &[Vector3<f64>]) -> Vector3<f64> {
        (joints[self.root_lateral.0] + joints[self.root_lateral.1]) / 2.0
    }

    fn root_axes(&self, joints: &[Vector3<f64>]) -> Option<Matrix3<f64>> {
        let lateral = joints[self.root_lateral.1] - joints[self.root_lateral.0];
        let up =
            (joints[self.root_up.0] + joints[self.root_up.1]) / 2.0 - self.root_position(joints);
        let x = lateral.try_normalize(1e-12)?;
        let z = (up - x * up.dot(&x)).try_normalize(1e-12)?;
        let y = z.cross(&x);
        Some(Matrix3::from_columns(&[x, y, z]))
    }

    /// Root orientation relative to the rest pose; `None` when the hips
    /// coincide or the trunk is parallel to the hip line.
    pub fn root_orientation(&self, joints: &[Vector3<f64>]) -> Option<Rotation3<f64>> {
        let obs = self.root_axes(joints)?;
        let rest = self.root_axes(&self.rest_pose())?;
        Some(renormalize(&Rotation3::from_matrix_unchecked(
            obs * rest.transpose(),
        )))
    }
}

/// Where a sensor attaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BodySite {
    /// The virtual root between the hips.
    Pelvis,
    /// A skeleton joint; orientation is that of the bone ending there.
    Joint(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorPlacement {
    pub name: String,
    pub site: BodySite,
    /// Fixed rotation from the joint frame to the sensor frame.
    pub mounting_rotation: Rotation3<f64>,
}

/// Body parts that take a `_left` / `_right` suffix, with the COCO-17
/// joint each attaches to.
const SIDED: [(&str, usize, usize); 8] = [
    ("forearm", 9, 10),
    ("wrist", 9, 10),
    ("upper_arm", 7, 8),
    ("thigh", 13, 14),
    ("shin", 15, 16),
    ("ankle", 15, 16),
    ("foot", 15, 16),
    ("hip", 11, 12),
];

impl SensorPlacement {
    /// Resolve a placement name against the COCO-17 skeleton with
    /// identity mounting. Limb parts take a `_left`/`_right` suffix;
    /// `head`, `waist_chest` and `back` do not.
    pub fn named(name: &str) -> Result<Self, SynthError> {
        let site = match name {
            "head" => BodySite::Joint(0),
            "waist_chest" | "back" => BodySite::Pelvis,
            _ => {
                let (part, side) = name
                    .rsplit_once('_')
                    .ok_or_else(|| SynthError::UnknownPlacement(name.to_string()))?;
                let &(_, l, r) = SIDED
                    .iter()
                    .find(|(p, _, _)| *p == part)
                    .ok_or_else(|| SynthError::UnknownPlacement(name.to_string()))?;
                match side {
                    "left" => BodySite::Joint(l),
                    "right" => BodySite::Joint(r),
                    _ => return Err(SynthError::UnknownPlacement(name.to_string())),
                }
            }
        };
        Ok(Self {
            name: name.to_string(),
            site,
            mounting_rotation: Rotation3::identity(),
        })
    }

    pub fn with_mounting(mut self, mounting: Rotation3<f64>) -> Self {
        self.mounting_rotation = mounting;
        self
    }
}

/// Per-frame world orientation of every joint.
///
/// Each bone rotates by the minimal rotation taking its parent-propagated
/// rest direction onto the observed direction, so twist is inherited from
/// the parent. Joints hanging off the root inherit the root orientation.
/// A zero-length observed bone reuses the previous frame's rotation
/// relative to its parent (identity on the first frame).
pub fn forward_kinematics(
    track: &MotionTrack3D,
    skeleton: &Skeleton,
) -> Result<Vec<Vec<Rotation3<f64>>>, SynthError> {
    let order = skeleton.topological_order()?;
    let n = skeleton.len();
    let mut prev_root = Rotation3::identity();
    let mut prev_local = vec![Rotation3::identity(); n];
    let mut out = Vec::with_capacity(track.len());
    for (t, joints) in track.joints_world.iter().enumerate() {
        if joints.len() != n {
            return Err(SynthError::JointCount {
                frame: t,
                expected: n,
                found: joints.len(),
            });
        }
        let root = skeleton.root_orientation(joints).unwrap_or(prev_root);
        let root_pos = skeleton.root_position(joints);
        let mut rot = vec![Rotation3::identity(); n];
        for &j in &order {
            let (parent_rot, parent_pos) = match skeleton.parents[j] {
                Some(p) => (rot[p], joints[p]),
                None => (root, root_pos),
            };
            let observed = joints[j] - parent_pos;
            let rest = parent_rot * skeleton.rest_offsets[j];
            rot[j] = if observed.norm() < 1e-9 || rest.norm() < 1e-12 {
                parent_rot * prev_local[j]
            } else {
                renormalize(&(minimal_rotation(&rest, &observed) * parent_rot))
            };
            prev_local[j] = parent_rot.inverse() * rot[j];
        }
        prev_root = root;
        out.push(rot);
    }
    Ok(out)
}

/// World position and orientation series of one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorKinematics {
    pub positions: Vec<Vector3<f64>>,
    pub orientations: Vec<Rotation3<f64>>,
}

/// Sensor pose = joint pose with the mounting rotation applied on the
/// right. Requires `track.joint_orientations`.
pub fn world_kinematics(
    track: &MotionTrack3D,
    skeleton: &Skeleton,
    placement: &SensorPlacement,
) -> Result<SensorKinematics, SynthError> {
    let orientations = track
        .joint_orientations
        .as_ref()
        .ok_or(SynthError::MissingOrientations)?;
    if let BodySite::Joint(j) = placement.site {
        if j >= skeleton.len() {
            return Err(SynthError::UnknownPlacement(placement.name.clone()));
        }
    }
    let mut positions = Vec::with_capacity(track.len());
    let mut rots = Vec::with_capacity(track.len());
    let mut prev_root = Rotation3::identity();
    for (joints, ori) in track.joints_world.iter().zip(orientations) {
        let (p, r) = match placement.site {
            BodySite::Joint(j) => (joints[j], ori[j]),
            BodySite::Pelvis => {
                let r = skeleton.root_orientation(joints).unwrap_or(prev_root);
                prev_root = r;
                (skeleton.root_position(joints), r)
            }
        };
        positions.push(p);
        rots.push(r * placement.mounting_rotation);
    }
    Ok(SensorKinematics {
        positions,
        orientations: rots,
    })
}
