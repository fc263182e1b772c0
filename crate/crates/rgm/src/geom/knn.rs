//! K-nearest-neighbor queries over point clouds.
//!
//! Below [`GRID_THRESHOLD`] points an exhaustive scan is used; at or above it
//! a uniform spatial grid prunes candidates. Both paths order neighbors by
//! squared distance with ties broken by lower index, so they agree exactly.

use super::{PointCloud, Vec3};
use crate::scalar::Real;
use crate::{Error, Result};
use std::collections::HashMap;

/// Cloud size at which the spatial grid takes over from exhaustive search.
pub const GRID_THRESHOLD: usize = 512;

/// Indices of the `k` nearest points to `cloud.points[query]`, excluding the
/// query itself, sorted ascending by distance (ties by lower index).
pub fn knn<T: Real>(cloud: &PointCloud<T>, query: usize, k: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if query >= n {
        return Err(Error::Parameter(format!(
            "query index {query} out of bounds for cloud of {n} points"
        )));
    }
    check_k(k, n)?;
    if n < GRID_THRESHOLD {
        Ok(knn_exhaustive(cloud, query, k))
    } else {
        let grid = Grid::build(cloud);
        Ok(grid.query(cloud, query, k))
    }
}

/// Neighbor lists for every point at once; one grid build is shared.
pub fn knn_all<T: Real>(cloud: &PointCloud<T>, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = cloud.len();
    check_k(k, n)?;
    if n < GRID_THRESHOLD {
        Ok((0..n).map(|q| knn_exhaustive(cloud, q, k)).collect())
    } else {
        let grid = Grid::build(cloud);
        Ok((0..n).map(|q| grid.query(cloud, q, k)).collect())
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if k >= n {
        return Err(Error::Parameter(format!(
            "k = {k} requires a cloud of more than {k} points, got {n}"
        )));
    }
    Ok(())
}

fn knn_exhaustive<T: Real>(cloud: &PointCloud<T>, query: usize, k: usize) -> Vec<usize> {
    let q = cloud.points[query];
    let mut cand: Vec<(T, usize)> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != query)
        .map(|(i, p)| (q.dist_sq(p), i))
        .collect();
    cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    cand.truncate(k);
    cand.into_iter().map(|(_, i)| i).collect()
}

struct Grid<T> {
    cells: HashMap<[i64; 3], Vec<usize>>,
    origin: Vec3<T>,
    cell_size: T,
    max_ring: i64,
}

impl<T: Real> Grid<T> {
    fn build(cloud: &PointCloud<T>) -> Self {
        let mut lo = cloud.points[0];
        let mut hi = cloud.points[0];
        for p in &cloud.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(hi[2] - lo[2]);
        // Aim for a few points per cell on average.
        let divisions = (cloud.len() as f64).cbrt().ceil().max(1.0);
        let cell_size = extent / crate::scalar::cast(divisions);
        let cell_size = if cell_size > T::zero() {
            cell_size
        } else {
            T::one()
        };
        let mut grid = Grid {
            cells: HashMap::new(),
            origin: lo,
            cell_size,
            max_ring: divisions as i64 + 1,
        };
        for (i, p) in cloud.points.iter().enumerate() {
            grid.cells.entry(grid.cell_of(p)).or_default().push(i);
        }
        grid
    }

    fn cell_of(&self, p: &Vec3<T>) -> [i64; 3] {
        let mut c = [0i64; 3];
        for a in 0..3 {
            c[a] = ((p[a] - self.origin[a]) / self.cell_size)
                .floor()
                .to_f64()
                .unwrap() as i64;
        }
        c
    }

    fn query(&self, cloud: &PointCloud<T>, query: usize, k: usize) -> Vec<usize> {
        let q = cloud.points[query];
        let home = self.cell_of(&q);
        let mut cand: Vec<(T, usize)> = Vec::new();
        for ring in 0..=self.max_ring {
            for cell in ring_cells(home, ring) {
                if let Some(members) = self.cells.get(&cell) {
                    for &i in members {
                        if i != query {
                            cand.push((q.dist_sq(&cloud.points[i]), i));
                        }
                    }
                }
            }
            if cand.len() >= k {
                cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                // Points beyond ring r sit at least r*cell away; a strict
                // bound keeps equidistant lower-index points reachable.
                let bound = self.cell_size * crate::scalar::cast(ring as f64);
                if cand[k - 1].0 < bound * bound {
                    break;
                }
            }
        }
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        cand.truncate(k);
        cand.into_iter().map(|(_, i)| i).collect()
    }
}

/// Cells whose Chebyshev distance from `center` is exactly `ring`.
fn ring_cells(center: [i64; 3], ring: i64) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    if ring == 0 {
        out.push(center);
        return out;
    }
    for dx in -ring..=ring {
        for dy in -ring..=ring {
            for dz in -ring..=ring {
                if dx.abs().max(dy.abs()).max(dz.abs()) == ring {
                    out.push([center[0] + dx, center[1] + dy, center[2] + dz]);
                }
            }
        }
    }
    out
}
