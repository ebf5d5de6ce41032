//! Uniform voxel-grid index for nearest-neighbour queries on point clouds.

use std::collections::HashMap;

use nalgebra::Vector3;

type Cell = (i64, i64, i64);

pub struct VoxelGrid<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    cells: HashMap<Cell, Vec<u32>>,
    lo: Cell,
    hi: Cell,
}

impl<'a> VoxelGrid<'a> {
    pub fn new(points: &'a [Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        let mut lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let c = key(p, cell);
            lo = (lo.0.min(c.0), lo.1.min(c.1), lo.2.min(c.2));
            hi = (hi.0.max(c.0), hi.1.max(c.1), hi.2.max(c.2));
            cells.entry(c).or_default().push(i as u32);
        }
        Self {
            points,
            cell,
            cells,
            lo,
            hi,
        }
    }

    /// Grid with a cell size suited to a roughly surface-like cloud.
    pub fn auto(points: &'a [Vector3<f64>]) -> Self {
        Self::new(points, surface_cell_size(points))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point within `radius`, as `(index, squared distance)`.
    pub fn nearest_within(&self, q: &Vector3<f64>, radius: f64) -> Option<(usize, f64)> {
        let c = key(q, self.cell);
        let reach = (radius / self.cell).ceil() as i64;
        let r2 = radius * radius;
        let mut best: Option<(usize, f64)> = None;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let Some(ids) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) else {
                        continue;
                    };
                    for &i in ids {
                        let d2 = (self.points[i as usize] - q).norm_squared();
                        if d2 <= r2
                            && best
                                .is_none_or(|(bi, bd)| d2 < bd || (d2 == bd && (i as usize) < bi))
                        {
                            best = Some((i as usize, d2));
                        }
                    }
                }
            }
        }
        best
    }

    /// The `k` nearest points sorted by distance (ties by index).
    pub fn knn(&self, q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let c = key(q, self.cell);
        let max_ring = [
            (c.0 - self.lo.0).abs(),
            (self.hi.0 - c.0).abs(),
            (c.1 - self.lo.1).abs(),
            (self.hi.1 - c.1).abs(),
            (c.2 - self.lo.2).abs(),
            (self.hi.2 - c.2).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        let mut found: Vec<(usize, f64)> = Vec::new();
        let mut ring = 0i64;
        loop {
            self.visit_ring(c, ring, |i| {
                found.push((i, (self.points[i] - q).norm_squared()));
            });
            if found.len() >= k {
                found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                // Anything in ring r+1 is at least r·cell away.
                let guard = ring as f64 * self.cell;
                if found[k - 1].1 <= guard * guard || ring >= max_ring {
                    found.truncate(k);
                    return found;
                }
            } else if ring >= max_ring {
                found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                return found;
            }
            ring += 1;
        }
    }

    fn visit_ring(&self, c: Cell, ring: i64, mut f: impl FnMut(usize)) {
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                for dz in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    if let Some(ids) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        ids.iter().for_each(|&i| f(i as usize));
                    }
                }
            }
        }
    }
}

fn key(p: &Vector3<f64>, cell: f64) -> Cell {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// Cell size giving a handful of points per cell for surface-like clouds.
pub fn surface_cell_size(points: &[Vector3<f64>]) -> f64 {
    if points.len() < 2 {
        return 1.0;
    }
    let (lo, hi) = points.iter().fold(
        (
            Vector3::repeat(f64::INFINITY),
            Vector3::repeat(f64::NEG_INFINITY),
        ),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    let diag = (hi - lo).norm();
    let s = 2.0 * diag / (points.len() as f64).sqrt();
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Median nearest-neighbour distance.
pub fn median_spacing(points: &[Vector3<f64>]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let grid = VoxelGrid::auto(points);
    let mut d: Vec<f64> = points
        .iter()
        .map(|p| grid.knn(p, 2).get(1).map_or(0.0, |x| x.1.sqrt()))
        .collect();
    let mid = d.len() / 2;
    d.select_nth_unstable_by(mid, f64::total_cmp);
    d[mid]
}
