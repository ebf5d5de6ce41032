//! Perspective-n-Point by Levenberg–Marquardt over a local axis-angle
//! rotation update, a translation and an optional image scale.
//!
//! Residual for correspondence i: `p2ᵢ − (1/s)·project(R p3ᵢ + T)`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{distort_normalized, CalibError, CameraIntrinsics};
use crate::geometry::{project_to_so3, skew, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub initial_damping: f64,
    /// A provided initialization whose result exceeds this RMSE (px) is
    /// retried from the closed-form estimate.
    pub retry_rmse: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-10,
            initial_damping: 1e-3,
            retry_rmse: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleMode {
    Estimate,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    pub transform: RigidTransform,
    pub scale: f64,
    pub rmse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after each accepted step, starting with the initial value.
    pub cost_history: Vec<f64>,
}

struct Problem<'a> {
    p2: &'a [Vector2<f64>],
    p3: &'a [Vector3<f64>],
    intr: &'a CameraIntrinsics,
}

impl Problem<'_> {
    fn residuals(&self, t: &RigidTransform, s: f64) -> Option<DVector<f64>> {
        let mut r = DVector::zeros(2 * self.p2.len());
        for (i, (x, p)) in self.p2.iter().zip(self.p3).enumerate() {
            let px = self.intr.project(&t.apply(p)).ok()?;
            let m = px / s;
            r[2 * i] = x.x - m.x;
            r[2 * i + 1] = x.y - m.y;
        }
        Some(r)
    }

    fn jacobian(&self, t: &RigidTransform, s: f64, with_scale: bool) -> Option<DMatrix<f64>> {
        let cols = if with_scale { 7 } else { 6 };
        let mut j = DMatrix::zeros(2 * self.p2.len(), cols);
        let f = Matrix2::new(self.intr.fx, 0.0, 0.0, self.intr.fy);
        for (i, p) in self.p3.iter().enumerate() {
            let q = t.apply(p);
            if q.z <= 0.0 {
                return None;
            }
            let xu = Vector2::new(q.x / q.z, q.y / q.z);
            let d_norm = Matrix2x3::new(
                1.0 / q.z,
                0.0,
                -q.x / (q.z * q.z),
                0.0,
                1.0 / q.z,
                -q.y / (q.z * q.z),
            );
            let d_dist = distortion_jacobian(&xu, self.intr.d)?;
            let dq_dparams = {
                let mut m = nalgebra::Matrix3x6::zeros();
                // Left perturbation moves the whole camera-frame point.
                m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&q)));
                m.fixed_view_mut::<3, 3>(0, 3)
                    .copy_from(&Matrix3::identity());
                m
            };
            let dpix = f * d_dist * d_norm * dq_dparams / s;
            for r in 0..2 {
                for c in 0..6 {
                    j[(2 * i + r, c)] = -dpix[(r, c)];
                }
            }
            if with_scale {
                let pix = self.intr.project(&q).ok()?;
                j[(2 * i, 6)] = pix.x / (s * s);
                j[(2 * i + 1, 6)] = pix.y / (s * s);
            }
        }
        Some(j)
    }
}

fn distortion_jacobian(xu: &Vector2<f64>, d: f64) -> Option<Matrix2<f64>> {
    if d == 0.0 {
        return Some(Matrix2::identity());
    }
    let h = 1e-7 * (1.0 + xu.norm());
    let mut jac = Matrix2::zeros();
    for k in 0..2 {
        let mut a = *xu;
        let mut b = *xu;
        a[k] += h;
        b[k] -= h;
        let da = distort_normalized(&a, d).ok()?;
        let db = distort_normalized(&b, d).ok()?;
        jac.set_column(k, &((da - db) / (2.0 * h)));
    }
    Some(jac)
}

/// Linear pose estimate (DLT on normalized image coordinates).
pub fn dlt_pose(
    p2: &[Vector2<f64>],
    p3: &[Vector3<f64>],
    intr: &CameraIntrinsics,
) -> Option<RigidTransform> {
    let n = p2.len();
    if n < 6 {
        return None;
    }
    let xn: Vec<Vector2<f64>> = p2.iter().map(|x| intr.undistort_pixel(x)).collect();
    let c3 = p3.iter().sum::<Vector3<f64>>() / n as f64;
    let s3 = (p3.iter().map(|p| (p - c3).norm()).sum::<f64>() / n as f64).max(1e-12);
    let c2 = xn.iter().sum::<Vector2<f64>>() / n as f64;
    let s2 = (xn.iter().map(|x| (x - c2).norm()).sum::<f64>() / n as f64).max(1e-12);

    let mut a = DMatrix::zeros(2 * n, 12);
    for i in 0..n {
        let p = (p3[i] - c3) / s3;
        let x = (xn[i] - c2) / s2;
        let ph = [p.x, p.y, p.z, 1.0];
        for k in 0..4 {
            a[(2 * i, k)] = ph[k];
            a[(2 * i, 8 + k)] = -x.x * ph[k];
            a[(2 * i + 1, 4 + k)] = ph[k];
            a[(2 * i + 1, 8 + k)] = -x.y * ph[k];
        }
    }
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))?;
    let v = eig.eigenvectors.column(imin);
    let pn = nalgebra::Matrix3x4::from_row_slice(v.as_slice());
    // Undo the normalizations: P = N2⁻¹ Pn N3.
    let n2_inv = Matrix3::new(s2, 0.0, c2.x, 0.0, s2, c2.y, 0.0, 0.0, 1.0);
    let mut n3 = nalgebra::Matrix4::identity() / s3;
    n3[(3, 3)] = 1.0;
    n3[(0, 3)] = -c3.x / s3;
    n3[(1, 3)] = -c3.y / s3;
    n3[(2, 3)] = -c3.z / s3;
    let mut p = n2_inv * pn * n3;
    let mut m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    let scale = m.determinant().cbrt();
    if !scale.is_finite() || scale.abs() < 1e-15 {
        return None;
    }
    let rotation = project_to_so3(&(m / scale));
    let translation = p.column(3).into_owned() / scale;
    let t = RigidTransform::new(rotation, translation);
    let in_front = p3.iter().filter(|p| t.apply(p).z > 0.0).count();
    (in_front * 2 > n).then_some(t)
}

/// Identity rotation, translation from the centroid ray and the ratio of
/// 3D to 2D spread.
pub fn centroid_pose(
    p2: &[Vector2<f64>],
    p3: &[Vector3<f64>],
    intr: &CameraIntrinsics,
) -> RigidTransform {
    let n = p2.len() as f64;
    let xn: Vec<Vector2<f64>> = p2.iter().map(|x| intr.undistort_pixel(x)).collect();
    let c2 = xn.iter().sum::<Vector2<f64>>() / n;
    let c3 = p3.iter().sum::<Vector3<f64>>() / n;
    let s2 = xn.iter().map(|x| (x - c2).norm()).sum::<f64>() / n;
    let s3 = p3.iter().map(|p| (p - c3).norm()).sum::<f64>() / n;
    let depth = if s2 > 1e-12 { s3 / s2 } else { 5.0 };
    let center = Vector3::new(c2.x * depth, c2.y * depth, depth);
    RigidTransform::new(Rotation3::identity(), center - c3)
}

fn run_lm(
    prob: &Problem,
    init: RigidTransform,
    scale: ScaleMode,
    cfg: &LmConfig,
) -> Option<PnpSolution> {
    let with_scale = matches!(scale, ScaleMode::Estimate);
    let mut s = match scale {
        ScaleMode::Estimate => 1.0,
        ScaleMode::Fixed(s) => s,
    };
    let mut t = init;
    let mut r = prob.residuals(&t, s)?;
    let mut cost = r.norm_squared();
    let mut history = vec![cost];
    let mut lambda = cfg.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let Some(j) = prob.jacobian(&t, s, with_scale) else {
            break;
        };
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if g.amax() < cfg.gradient_tolerance || cost < 1e-28 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let omega = Vector3::new(step[0], step[1], step[2]);
            let dt = Vector3::new(step[3], step[4], step[5]);
            let cand_t = t.perturbed(&omega, &dt);
            let cand_s = if with_scale { s + step[6] } else { s };
            if cand_s <= 0.0 {
                lambda *= 10.0;
                continue;
            }
            match prob.residuals(&cand_t, cand_s) {
                Some(cr) if cr.norm_squared() <= cost => {
                    let new_cost = cr.norm_squared();
                    let rel = (cost - new_cost) / cost.max(1e-300);
                    t = cand_t;
                    s = cand_s;
                    r = cr;
                    cost = new_cost;
                    history.push(cost);
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel < 1e-15 && step.amax() < 1e-14 {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            // No descent direction left at any damping: a stationary point.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    let rmse = (cost / prob.p2.len() as f64).sqrt();
    Some(PnpSolution {
        transform: RigidTransform::new(crate::geometry::renormalize(&t.rotation), t.translation),
        scale: s,
        rmse,
        converged,
        iterations,
        cost_history: history,
    })
}

/// Solve for `(R, T, s)` from 2D–3D correspondences.
pub fn solve(
    p2: &[Vector2<f64>],
    p3: &[Vector3<f64>],
    intr: &CameraIntrinsics,
    init: Option<&RigidTransform>,
    scale: ScaleMode,
    cfg: &LmConfig,
) -> Result<PnpSolution, CalibError> {
    if p2.len() != p3.len() {
        return Err(CalibError::LengthMismatch(p2.len(), p3.len()));
    }
    if p2.len() < 4 {
        return Err(CalibError::TooFewCorrespondences(p2.len()));
    }
    if is_collinear(p3) {
        return Err(CalibError::Degenerate);
    }
    let prob = Problem { p2, p3, intr };
    let mut best: Option<PnpSolution> = None;
    fn consider(best: &mut Option<PnpSolution>, sol: Option<PnpSolution>) {
        if let Some(sol) = sol {
            if best.as_ref().is_none_or(|b| sol.rmse < b.rmse) {
                *best = Some(sol);
            }
        }
    }
    if let Some(init) = init {
        consider(&mut best, run_lm(&prob, *init, scale, cfg));
        if best.as_ref().is_some_and(|b| b.rmse <= cfg.retry_rmse) {
            return Ok(best.unwrap());
        }
    }
    if let Some(dlt) = dlt_pose(p2, p3, intr) {
        consider(&mut best, run_lm(&prob, dlt, scale, cfg));
    }
    if best.as_ref().is_none_or(|b| b.rmse > cfg.retry_rmse) {
        let base = centroid_pose(p2, p3, intr);
        for yaw in [0.0, 0.5, -0.5, 1.0, -1.0, std::f64::consts::PI] {
            let r = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
            let c3 = p3.iter().sum::<Vector3<f64>>() / p3.len() as f64;
            let center = base.apply(&c3);
            let cand = RigidTransform::new(r, center - r * c3);
            consider(&mut best, run_lm(&prob, cand, scale, cfg));
            if best.as_ref().is_some_and(|b| b.rmse <= cfg.retry_rmse) {
                break;
            }
        }
    }
    best.ok_or(CalibError::NoValidInitialization)
}

fn is_collinear(p3: &[Vector3<f64>]) -> bool {
    let c = p3.iter().sum::<Vector3<f64>>() / p3.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in p3 {
        let d = p - c;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[0] <= 0.0 || ev[1] <= 1e-12 * ev[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            px: 320.0,
            py: 240.0,
            d: 0.0,
        }
    }

    fn body() -> Vec<Vector3<f64>> {
        (0..17)
            .map(|i| {
                let a = i as f64 * 0.7;
                Vector3::new(0.3 * a.sin(), 0.9 * (a * 0.37).cos(), 0.2 * (a * 1.3).sin())
            })
            .collect()
    }

    #[test]
    fn dlt_exact_recovery() {
        let gt = RigidTransform::from_axis_angle(
            Vector3::new(0.2, -0.3, 0.1),
            Vector3::new(0.1, -0.2, 4.0),
        );
        let p3 = body();
        let p2: Vec<_> = p3
            .iter()
            .map(|p| intr().project(&gt.apply(p)).unwrap())
            .collect();
        let est = dlt_pose(&p2, &p3, &intr()).unwrap();
        assert!(
            est.rotation_angle_to(&gt) < 1e-8,
            "angle {} t {:?}",
            est.rotation_angle_to(&gt),
            est.translation
        );
        assert!((est.translation - gt.translation).norm() < 1e-8);
    }

    #[test]
    fn lm_cost_non_increasing() {
        let gt = RigidTransform::from_axis_angle(
            Vector3::new(0.5, 0.2, -0.4),
            Vector3::new(0.3, 0.1, 3.5),
        );
        let p3 = body();
        let p2: Vec<_> = p3
            .iter()
            .map(|p| intr().project(&gt.apply(p)).unwrap())
            .collect();
        let init = RigidTransform::new(Rotation3::identity(), Vector3::new(0.0, 0.0, 3.0));
        let sol = solve(
            &p2,
            &p3,
            &intr(),
            Some(&init),
            ScaleMode::Estimate,
            &LmConfig::default(),
        )
        .unwrap();
        assert!(sol.cost_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(sol.rmse < 1e-6, "rmse {}", sol.rmse);
        assert!((sol.scale - 1.0).abs() < 1e-8);
    }

    #[test]
    fn too_few_and_collinear() {
        let p3 = vec![Vector3::new(0.0, 0.0, 0.0); 3];
        let p2 = vec![Vector2::new(0.0, 0.0); 3];
        assert!(matches!(
            solve(
                &p2,
                &p3,
                &intr(),
                None,
                ScaleMode::Fixed(1.0),
                &LmConfig::default()
            ),
            Err(CalibError::TooFewCorrespondences(3))
        ));
        let p3: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let p2 = vec![Vector2::new(0.0, 0.0); 5];
        assert!(matches!(
            solve(
                &p2,
                &p3,
                &intr(),
                None,
                ScaleMode::Fixed(1.0),
                &LmConfig::default()
            ),
            Err(CalibError::Degenerate)
        ));
    }
}
