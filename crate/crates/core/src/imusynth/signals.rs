//! Accelerometer, gyroscope and magnetometer synthesis from sensor
//! kinematics.

use nalgebra::{Rotation3, Vector3};

use super::SynthError;
use crate::geometry::log_so3;

pub const STANDARD_GRAVITY: f64 = 9.81;

/// Gravitational acceleration in the Z-up world frame.
pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -STANDARD_GRAVITY)
}

/// Default world magnetic field: unit vector dipping 60° below the
/// horizon along +X.
pub fn default_field() -> Vector3<f64> {
    let dip = 60f64.to_radians();
    Vector3::new(dip.cos(), 0.0, -dip.sin())
}

/// Points in each finite-difference stencil: tenth-order accurate in the
/// interior, which keeps one-sided edge stencils within 1 % up to a fifth
/// of the Nyquist rate.
pub const STENCIL_POINTS: usize = 11;

/// Fornberg finite-difference weights for the `m`-th derivative at `z`
/// over nodes `x`.
pub fn fd_weights(z: f64, x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Second time derivative of a uniformly sampled vector series: centred
/// stencils in the interior, shifted (one-sided) stencils of the same
/// width near the ends.
pub fn second_derivative(series: &[Vector3<f64>], fps: f64) -> Vec<Vector3<f64>> {
    let n = series.len();
    let width = STENCIL_POINTS.min(n);
    let half = width / 2;
    // Stencils depend only on the offset of `t` within its window.
    let weights: Vec<Vec<f64>> = (0..width)
        .map(|pos| {
            let nodes: Vec<f64> = (0..width).map(|k| k as f64 - pos as f64).collect();
            fd_weights(0.0, &nodes, 2)
        })
        .collect();
    (0..n)
        .map(|t| {
            let start = t.saturating_sub(half).min(n - width);
            let w = &weights[t - start];
            let mut acc = Vector3::zeros();
            for (k, wk) in w.iter().enumerate() {
                acc += series[start + k] * *wk;
            }
            acc * (fps * fps)
        })
        .collect()
}

/// Specific force in the sensor frame: `Rᵀ(a − g)` (or `Rᵀa` without
/// gravity).
pub fn accel_signal(
    positions: &[Vector3<f64>],
    orientations: &[Rotation3<f64>],
    fps: f64,
    gravity_on: bool,
) -> Result<Vec<Vector3<f64>>, SynthError> {
    if positions.len() != orientations.len() {
        return Err(SynthError::LengthMismatch(
            positions.len(),
            orientations.len(),
        ));
    }
    if positions.len() < 3 {
        return Err(SynthError::TooShort {
            needed: 3,
            found: positions.len(),
        });
    }
    let g = if gravity_on {
        gravity()
    } else {
        Vector3::zeros()
    };
    Ok(second_derivative(positions, fps)
        .iter()
        .zip(orientations)
        .map(|(a, r)| r.inverse() * (a - g))
        .collect())
}

/// Body-frame angular rate from consecutive orientations,
/// `log(R_tᵀ R_{t+1})·fps`; the last sample repeats its neighbour.
pub fn gyro_signal(
    orientations: &[Rotation3<f64>],
    fps: f64,
) -> Result<Vec<Vector3<f64>>, SynthError> {
    let n = orientations.len();
    if n < 2 {
        return Err(SynthError::TooShort {
            needed: 2,
            found: n,
        });
    }
    let mut out = Vec::with_capacity(n);
    for t in 0..n - 1 {
        let rel = orientations[t].inverse() * orientations[t + 1];
        let w = log_so3(&rel).ok_or(SynthError::AmbiguousRotation { frame: t })?;
        out.push(w * fps);
    }
    out.push(out[n - 2]);
    Ok(out)
}

/// The world field in each sensor frame, normalized.
pub fn mag_signal(
    orientations: &[Rotation3<f64>],
    field: &Vector3<f64>,
) -> Result<Vec<Vector3<f64>>, SynthError> {
    let f = field.try_normalize(1e-12).ok_or(SynthError::ZeroField)?;
    Ok(orientations
        .iter()
        .map(|r| (r.inverse() * f).normalize())
        .collect())
}
