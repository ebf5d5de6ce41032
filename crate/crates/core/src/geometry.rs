//! Rigid-body transforms and SO(3) helpers shared by calibration, ego-motion
//! and sensor synthesis.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

/// Angle beyond which the rotation logarithm is treated as ambiguous.
pub const LOG_AMBIGUITY_TOL: f64 = 1e-6;

/// A proper rigid transform `x -> R x + T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Build from an axis-angle vector and a translation.
    pub fn from_axis_angle(omega: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(Rotation3::from_scaled_axis(omega), translation)
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.inverse();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Left-multiply by the small motion `(exp(omega), t)`.
    pub fn perturbed(&self, omega: &Vector3<f64>, t: &Vector3<f64>) -> RigidTransform {
        RigidTransform::new(Rotation3::from_scaled_axis(*omega), *t).compose(self)
    }

    /// Geodesic interpolation on the rotation and linear on the translation.
    pub fn interpolate(&self, other: &RigidTransform, s: f64) -> RigidTransform {
        let delta = self.rotation.inverse() * other.rotation;
        let omega = log_so3(&delta).unwrap_or_else(|| delta.scaled_axis());
        let rotation = self.rotation * Rotation3::from_scaled_axis(omega * s);
        RigidTransform {
            rotation: renormalize(&rotation),
            translation: self.translation * (1.0 - s) + other.translation * s,
        }
    }

    /// Max deviation from `RᵀR = I` and `det R = 1`.
    pub fn orthonormality_error(&self) -> f64 {
        rotation_error(&self.rotation)
    }

    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(self.rotation.inverse() * other.rotation))
    }
}

/// Rotation angle in `[0, π]`, robust near zero (no `acos` of a value
/// rounded past 1).
pub fn rotation_angle(r: &Rotation3<f64>) -> f64 {
    let m = r.matrix();
    let s = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    )
    .norm()
        / 2.0;
    let c = (m.trace() - 1.0) / 2.0;
    s.atan2(c)
}

/// Max abs entry of `RᵀR − I`, combined with `|det R − 1|`.
pub fn rotation_error(r: &Rotation3<f64>) -> f64 {
    let m = r.matrix();
    let gram = m.transpose() * m - Matrix3::identity();
    gram.abs().max().max((m.determinant() - 1.0).abs())
}

/// Project a nearly orthonormal matrix back onto SO(3) via SVD.
pub fn renormalize(r: &Rotation3<f64>) -> Rotation3<f64> {
    project_to_so3(r.matrix())
}

pub fn project_to_so3(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Rotation3::from_matrix_unchecked(u * d * vt)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation logarithm; `None` when the angle is within
/// [`LOG_AMBIGUITY_TOL`] of π, where the axis sign is undetermined.
pub fn log_so3(r: &Rotation3<f64>) -> Option<Vector3<f64>> {
    let angle = rotation_angle(r);
    if std::f64::consts::PI - angle < LOG_AMBIGUITY_TOL {
        return None;
    }
    if angle < std::f64::consts::FRAC_PI_2 {
        // Well-conditioned from the antisymmetric part, including near zero.
        let m = r.matrix();
        let v = Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        ) / 2.0;
        let s = v.norm();
        let k = if s < 1e-12 {
            1.0 + s * s / 6.0
        } else {
            angle / s
        };
        return Some(v * k);
    }
    Some(r.scaled_axis())
}

/// Minimal rotation taking unit direction `from` onto `to`.
///
/// For antiparallel inputs the rotation is π about an axis perpendicular to
/// `from`, picked deterministically.
pub fn minimal_rotation(from: &Vector3<f64>, to: &Vector3<f64>) -> Rotation3<f64> {
    let a = from.normalize();
    let b = to.normalize();
    let c = a.dot(&b);
    if c > -1.0 + 1e-12 {
        let axis = a.cross(&b);
        let s = axis.norm();
        if s < 1e-15 {
            return Rotation3::identity();
        }
        let angle = s.atan2(c);
        return Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
    }
    let helper = if a.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let axis = Unit::new_normalize(a.cross(&helper));
    Rotation3::from_axis_angle(&axis, std::f64::consts::PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compose_inverse_is_identity() {
        let t = RigidTransform::from_axis_angle(
            Vector3::new(0.1, -0.4, 0.3),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let id = t.compose(&t.inverse());
        assert!(id.rotation.angle() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
        let p = Vector3::new(0.3, -1.0, 2.0);
        assert_relative_eq!(t.inverse().apply(&t.apply(&p)), p, epsilon = 1e-12);
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let a = RigidTransform::identity();
        let b = RigidTransform::from_axis_angle(
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(2.0, 0.0, 0.0),
        );
        let mid = a.interpolate(&b, 0.5);
        assert_relative_eq!(mid.rotation.angle(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(mid.translation.x, 1.0, epsilon = 1e-12);
        assert!(a.interpolate(&b, 1.0).rotation_angle_to(&b) < 1e-12);
        assert!(mid.orthonormality_error() < 1e-12);
        let same = a.interpolate(&a, 0.3);
        assert!(same.orthonormality_error() < 1e-12, "{same:?}");
    }

    #[test]
    fn minimal_rotation_cases() {
        let r = minimal_rotation(&Vector3::z(), &Vector3::x());
        assert_relative_eq!(r * Vector3::z(), Vector3::x(), epsilon = 1e-12);
        assert_relative_eq!(r.angle(), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        let flip = minimal_rotation(&Vector3::z(), &-Vector3::z());
        assert_relative_eq!(flip * Vector3::z(), -Vector3::z(), epsilon = 1e-12);
        assert_eq!(
            minimal_rotation(&Vector3::y(), &Vector3::y()),
            Rotation3::identity()
        );
    }

    #[test]
    fn log_rejects_half_turn() {
        let r = Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
        assert!(log_so3(&r).is_none());
        let r = Rotation3::from_axis_angle(&Vector3::x_axis(), 1.0);
        assert_relative_eq!(
            log_so3(&r).unwrap(),
            Vector3::new(1.0, 0.0, 0.0),
            epsilon = 1e-12
        );
    }
}
