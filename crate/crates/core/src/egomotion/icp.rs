//! Normal estimation and colored ICP.
//!
//! The colored objective follows the Park–Zhou–Koltun formulation: each
//! target point carries a normal and an intensity gradient constrained to its
//! tangent plane. For a correspondence `(q, p)` with transformed source point
//! `q'`:
//!
//! - geometric residual `r_G = (q' − p)·n_p`
//! - color residual `r_C = C(p) + d_p·(f(q') − p) − C(q)`, where `f` projects
//!   onto the tangent plane of `p`
//!
//! and the minimized energy is `Σ (1 − δ)·r_C² + δ·r_G²`, solved by
//! Gauss–Newton over a left-multiplied SE(3) increment.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::spatial::{median_spacing, VoxelGrid};
use super::{ColoredPointCloud, EgoError};
use crate::geometry::RigidTransform;
use crate::par;

/// Minimum correspondences per iteration.
pub const MIN_CORRESPONDENCES: usize = 10;

/// Per-point normals from the smallest-eigenvalue eigenvector of the
/// k-neighbourhood covariance, oriented towards the camera origin.
pub fn estimate_normals(
    cloud: &ColoredPointCloud,
    k: usize,
) -> Result<ColoredPointCloud, EgoError> {
    if cloud.len() < k + 1 {
        return Err(EgoError::TooFewPoints {
            needed: k + 1,
            found: cloud.len(),
        });
    }
    let grid = VoxelGrid::auto(&cloud.points);
    let normals = par::map(&cloud.points, |p| {
        let nb = grid.knn(p, k + 1);
        let mean = nb
            .iter()
            .map(|(i, _)| cloud.points[*i])
            .sum::<Vector3<f64>>()
            / nb.len() as f64;
        let mut cov = Matrix3::zeros();
        for (i, _) in &nb {
            let d = cloud.points[*i] - mean;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        let imin = eig.eigenvalues.imin();
        let mut n: Vector3<f64> = eig.eigenvectors.column(imin).into_owned();
        n.normalize_mut();
        if n.dot(&(-p)) < 0.0 {
            n = -n;
        }
        n
    });
    Ok(ColoredPointCloud {
        normals: Some(normals),
        ..cloud.clone()
    })
}

/// Tangent-plane intensity gradients for every point (requires normals).
pub fn color_gradients(cloud: &ColoredPointCloud, k: usize) -> Vec<Vector3<f64>> {
    local_features(cloud, k)
        .into_iter()
        .map(|(g, _)| g)
        .collect()
}

/// Surface variation `λ_min / Σλ` of each point's k-neighbourhood: zero on
/// a plane, up to 1/3 at corners and for isotropic scatter.
pub fn surface_variation(cloud: &ColoredPointCloud, k: usize) -> Vec<f64> {
    let grid = VoxelGrid::auto(&cloud.points);
    par::map(&cloud.points, |p| {
        variation_of(&cloud.points, &grid.knn(p, k + 1))
    })
}

fn variation_of(points: &[Vector3<f64>], nb: &[(usize, f64)]) -> f64 {
    let mean = nb.iter().map(|(i, _)| points[*i]).sum::<Vector3<f64>>() / nb.len() as f64;
    let mut cov = Matrix3::zeros();
    for (i, _) in nb {
        let d = points[*i] - mean;
        cov += d * d.transpose();
    }
    let ev = cov.symmetric_eigenvalues();
    let total = ev.sum();
    if total <= 0.0 {
        0.0
    } else {
        ev.min().max(0.0) / total
    }
}

/// Intensity gradient and surface variation per point, from one
/// neighbourhood query.
fn local_features(cloud: &ColoredPointCloud, k: usize) -> Vec<(Vector3<f64>, f64)> {
    let normals = cloud.normals.as_ref().expect("normals estimated");
    let grid = VoxelGrid::auto(&cloud.points);
    let intensity: Vec<f64> = cloud
        .colors
        .iter()
        .map(|c| (c[0] + c[1] + c[2]) / 3.0)
        .collect();
    par::map_range(cloud.len(), |i| {
        let p = cloud.points[i];
        let n = normals[i];
        let nb = grid.knn(&p, k + 1);
        let mut ata = Matrix3::zeros();
        let mut atb = Vector3::zeros();
        for &(j, _) in &nb {
            if j == i {
                continue;
            }
            let q = cloud.points[j];
            let proj = q - n * (q - p).dot(&n);
            let a = proj - p;
            ata += a * a.transpose();
            atb += a * (intensity[j] - intensity[i]);
        }
        let w = nb.len() as f64;
        ata += n * n.transpose() * (w * w);
        let scale = ata.trace().max(1e-30);
        ata += Matrix3::identity() * (1e-12 * scale);
        let g = ata.lu().solve(&atb).unwrap_or_else(Vector3::zeros);
        (g - n * g.dot(&n), variation_of(&cloud.points, &nb))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    /// Weight of the geometric term; `1 − delta` weighs color.
    pub delta: f64,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    /// Correspondence gate as a multiple of the target's median point spacing.
    pub gate_spacing_multiple: f64,
    /// Coarse-to-fine voxel sizes as multiples of the median spacing; 1 (or
    /// below) means the original resolution.
    pub pyramid: Vec<f64>,
    pub normal_neighbors: usize,
    /// Target points whose neighbourhood surface variation exceeds this
    /// are not used as correspondences: their normals straddle edges and
    /// corners and bias the point-to-plane term. 1 keeps every point.
    pub max_surface_variation: f64,
    /// When the source carries normals, pairs whose rotated source normal
    /// and target normal have a cosine below this are dropped (matches
    /// across an edge onto a different surface). -1 keeps every pair.
    pub min_normal_cosine: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            delta: 0.968,
            max_iterations: 50,
            relative_tolerance: 1e-6,
            gate_spacing_multiple: 3.0,
            pyramid: vec![4.0, 2.0, 1.0],
            normal_neighbors: 30,
            max_surface_variation: 2e-4,
            min_normal_cosine: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps source (frame t) coordinates into target (frame t−1) coordinates.
    pub transform: RigidTransform,
    /// Mean energy per correspondence at the final iterate.
    pub residual: f64,
    pub correspondences: usize,
    pub iterations: usize,
    /// Per iteration: energy before and after the update, both under that
    /// iteration's correspondences.
    pub energy_trace: Vec<(f64, f64)>,
}

struct Prepared {
    cloud: ColoredPointCloud,
    gradients: Vec<Vector3<f64>>,
    variation: Vec<f64>,
    intensity: Vec<f64>,
    spacing: f64,
}

fn prepare_target(target: &ColoredPointCloud, k: usize) -> Result<Prepared, EgoError> {
    let cloud = if target.normals.is_some() {
        target.clone()
    } else {
        estimate_normals(target, k.min(target.len().saturating_sub(1)))?
    };
    let (gradients, variation) = local_features(&cloud, k.min(cloud.len().saturating_sub(1)))
        .into_iter()
        .unzip();
    let intensity = cloud
        .colors
        .iter()
        .map(|c| (c[0] + c[1] + c[2]) / 3.0)
        .collect();
    let spacing = median_spacing(&cloud.points);
    Ok(Prepared {
        cloud,
        gradients,
        variation,
        intensity,
        spacing,
    })
}

/// Voxel-average downsampling (points and colors; normals dropped).
pub fn voxel_downsample(cloud: &ColoredPointCloud, voxel: f64) -> ColoredPointCloud {
    use std::collections::BTreeMap;
    // Per voxel: point sum, color sum, count.
    type Cell = (Vector3<f64>, [f64; 3], usize);
    let mut acc: BTreeMap<(i64, i64, i64), Cell> = BTreeMap::new();
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        let key = (
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        );
        let e = acc.entry(key).or_insert((Vector3::zeros(), [0.0; 3], 0));
        e.0 += p;
        for (sum, v) in e.1.iter_mut().zip(c) {
            *sum += v;
        }
        e.2 += 1;
    }
    let mut out = ColoredPointCloud::default();
    for (_, (p, c, n)) in acc {
        let n = n as f64;
        out.points.push(p / n);
        out.colors.push([c[0] / n, c[1] / n, c[2] / n]);
    }
    out
}

struct Corr {
    src: Vector3<f64>,
    src_intensity: f64,
    tgt: usize,
}

fn energy(corrs: &[Corr], tgt: &Prepared, t: &RigidTransform, delta: f64) -> f64 {
    let normals = tgt.cloud.normals.as_ref().unwrap();
    corrs
        .iter()
        .map(|c| {
            let q = t.apply(&c.src);
            let p = tgt.cloud.points[c.tgt];
            let n = normals[c.tgt];
            let rg = (q - p).dot(&n);
            let f = q - n * (q - p).dot(&n);
            let rc = tgt.intensity[c.tgt] + tgt.gradients[c.tgt].dot(&(f - p)) - c.src_intensity;
            (1.0 - delta) * rc * rc + delta * rg * rg
        })
        .sum::<f64>()
}

fn align_level(
    source: &ColoredPointCloud,
    tgt: &Prepared,
    init: RigidTransform,
    cfg: &IcpConfig,
    gate: f64,
    fine: bool,
    trace: &mut Vec<(f64, f64)>,
) -> Result<(RigidTransform, f64, usize, usize), EgoError> {
    let grid = VoxelGrid::new(&tgt.cloud.points, gate.max(1e-9));
    let normals = tgt.cloud.normals.as_ref().unwrap();
    let max_variation = if fine {
        cfg.max_surface_variation
    } else {
        f64::INFINITY
    };
    let src_intensity: Vec<f64> = source
        .colors
        .iter()
        .map(|c| (c[0] + c[1] + c[2]) / 3.0)
        .collect();
    let delta = cfg.delta;
    let (wg, wc) = (delta, 1.0 - delta);
    let mut t = init;
    let mut prev: Option<f64> = None;
    let mut last = (0.0, 0usize);
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let matches = par::map_range(source.len(), |i| {
            let q = t.apply(&source.points[i]);
            grid.nearest_within(&q, gate)
                .filter(|&(j, _)| tgt.variation[j] <= max_variation)
                .filter(|&(j, _)| match (&source.normals, fine) {
                    (Some(sn), true) => {
                        (t.rotation * sn[i]).dot(&normals[j]) >= cfg.min_normal_cosine
                    }
                    _ => true,
                })
                .map(|(j, _)| Corr {
                    src: source.points[i],
                    src_intensity: src_intensity[i],
                    tgt: j,
                })
        });
        let corrs: Vec<Corr> = matches.into_iter().flatten().collect();
        if corrs.len() < MIN_CORRESPONDENCES {
            return Err(EgoError::IcpFailed {
                correspondences: corrs.len(),
            });
        }
        let e0 = energy(&corrs, tgt, &t, delta);
        let mut h = Matrix6::zeros();
        let mut b = Vector6::zeros();
        for c in &corrs {
            let q = t.apply(&c.src);
            let p = tgt.cloud.points[c.tgt];
            let n = normals[c.tgt];
            let d = tgt.gradients[c.tgt];
            let rg = (q - p).dot(&n);
            let f = q - n * (q - p).dot(&n);
            let rc = tgt.intensity[c.tgt] + d.dot(&(f - p)) - c.src_intensity;
            let jg = Vector6::new(q.cross(&n).x, q.cross(&n).y, q.cross(&n).z, n.x, n.y, n.z);
            let qd = q.cross(&d);
            let jc = Vector6::new(qd.x, qd.y, qd.z, d.x, d.y, d.z);
            h += jg * jg.transpose() * wg + jc * jc.transpose() * wc;
            b += jg * (rg * wg) + jc * (rc * wc);
        }
        let ridge = 1e-12 * h.trace().max(1e-30);
        let step = (h + Matrix6::identity() * ridge)
            .lu()
            .solve(&(-b))
            .unwrap_or_else(Vector6::zeros);
        let mut alpha = 1.0;
        let mut accepted = t;
        let mut e1 = e0;
        for _ in 0..20 {
            let s = step * alpha;
            let cand = t.perturbed(
                &Vector3::new(s[0], s[1], s[2]),
                &Vector3::new(s[3], s[4], s[5]),
            );
            let e = energy(&corrs, tgt, &cand, delta);
            if e <= e0 {
                accepted = cand;
                e1 = e;
                break;
            }
            alpha *= 0.5;
        }
        trace.push((e0, e1));
        t = accepted;
        let mean = e1 / corrs.len() as f64;
        last = (mean, corrs.len());
        let done = match prev {
            Some(p) => (p - mean).abs() <= cfg.relative_tolerance * p.max(1e-300) || mean < 1e-24,
            None => mean < 1e-24,
        };
        if done && step.norm() * alpha < 1e-6 {
            break;
        }
        if step.norm() * alpha < 1e-12 {
            break;
        }
        prev = Some(mean);
    }
    Ok((t, last.0, last.1, iterations))
}

/// Align `source` (frame t) to `target` (frame t−1).
pub fn colored_icp(
    source: &ColoredPointCloud,
    target: &ColoredPointCloud,
    cfg: &IcpConfig,
) -> Result<IcpResult, EgoError> {
    colored_icp_from(source, target, RigidTransform::identity(), cfg)
}

pub fn colored_icp_from(
    source: &ColoredPointCloud,
    target: &ColoredPointCloud,
    init: RigidTransform,
    cfg: &IcpConfig,
) -> Result<IcpResult, EgoError> {
    if !(0.0..=1.0).contains(&cfg.delta) {
        return Err(EgoError::InvalidParameter(format!(
            "delta {} outside [0,1]",
            cfg.delta
        )));
    }
    if !(cfg.max_surface_variation >= 0.0) {
        return Err(EgoError::InvalidParameter(format!(
            "max_surface_variation {} must be non-negative",
            cfg.max_surface_variation
        )));
    }
    if target.normals.is_none() {
        return Err(EgoError::MissingNormals);
    }
    if source.len() < MIN_CORRESPONDENCES || target.len() < MIN_CORRESPONDENCES {
        return Err(EgoError::IcpFailed {
            correspondences: source.len().min(target.len()),
        });
    }
    let fine = prepare_target(target, cfg.normal_neighbors)?;
    let base_spacing = fine.spacing.max(1e-9);
    let mut levels: Vec<f64> = cfg.pyramid.iter().copied().filter(|&f| f > 1.0).collect();
    levels.push(1.0);

    let mut t = init;
    let mut trace = Vec::new();
    let mut result = (0.0, 0usize, 0usize);
    for factor in levels {
        let (src, tgt_owned);
        let tgt: &Prepared = if factor > 1.0 {
            let voxel = factor * base_spacing;
            let coarse_tgt = voxel_downsample(target, voxel);
            src = voxel_downsample(source, voxel);
            if coarse_tgt.len() < cfg.normal_neighbors.min(8) + 1 || src.len() < MIN_CORRESPONDENCES
            {
                continue;
            }
            tgt_owned =
                prepare_target(&coarse_tgt, cfg.normal_neighbors.min(coarse_tgt.len() - 1))?;
            &tgt_owned
        } else {
            src = source.clone();
            &fine
        };
        let gate = cfg.gate_spacing_multiple * tgt.spacing.max(1e-9);
        // Coarse neighbourhoods span several surfaces, so correspondence
        // rejection applies at the finest level only.
        let (nt, res, n, it) = align_level(&src, tgt, t, cfg, gate, factor <= 1.0, &mut trace)?;
        t = nt;
        result = (res, n, result.2 + it);
    }
    Ok(IcpResult {
        transform: t,
        residual: result.0,
        correspondences: result.1,
        iterations: result.2,
        energy_trace: trace,
    })
}

/// Mean colored-ICP energy of `source` under `t` against `target`, using
/// nearest-neighbour correspondences within the configured gate.
pub fn alignment_energy(
    source: &ColoredPointCloud,
    target: &ColoredPointCloud,
    t: &RigidTransform,
    cfg: &IcpConfig,
) -> Result<f64, EgoError> {
    let tgt = prepare_target(target, cfg.normal_neighbors)?;
    let gate = cfg.gate_spacing_multiple * tgt.spacing.max(1e-9);
    let grid = VoxelGrid::new(&tgt.cloud.points, gate);
    let corrs: Vec<Corr> = source
        .points
        .iter()
        .zip(&source.colors)
        .filter_map(|(p, c)| {
            grid.nearest_within(&t.apply(p), gate)
                .filter(|&(j, _)| tgt.variation[j] <= cfg.max_surface_variation)
                .map(|(j, _)| Corr {
                    src: *p,
                    src_intensity: (c[0] + c[1] + c[2]) / 3.0,
                    tgt: j,
                })
        })
        .collect();
    if corrs.is_empty() {
        return Err(EgoError::IcpFailed { correspondences: 0 });
    }
    Ok(energy(&corrs, &tgt, t, cfg.delta) / corrs.len() as f64)
}
