//! Desk-scale evaluation: shell occupancy, pairwise (1 − IoU) diversity and
//! a chamfer fidelity proxy.

use bitvec::prelude::*;
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::grid::Coord;

/// Dense occupancy bitset, `x` fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    resolution: [u32; 3],
    bits: BitVec,
}

impl OccupancyGrid {
    pub fn empty(resolution: [u32; 3]) -> Self {
        let len = resolution.iter().map(|&r| r as usize).product();
        Self {
            resolution,
            bits: bitvec![0; len],
        }
    }

    /// Occupancy of integer cells; cells outside the resolution are ignored.
    pub fn from_coords<'a>(resolution: [u32; 3], coords: impl IntoIterator<Item = &'a Coord>) -> Self {
        let mut g = Self::empty(resolution);
        for c in coords {
            g.set(c);
        }
        g
    }

    fn index(&self, c: &Coord) -> Option<usize> {
        let r = self.resolution;
        if (0..3).any(|a| c[a] < 0 || c[a] as u32 >= r[a]) {
            return None;
        }
        Some(((c[2] as usize * r[1] as usize) + c[1] as usize) * r[0] as usize + c[0] as usize)
    }

    pub fn set(&mut self, c: &Coord) {
        if let Some(i) = self.index(c) {
            self.bits.set(i, true);
        }
    }

    pub fn get(&self, c: &Coord) -> bool {
        self.index(c).is_some_and(|i| self.bits[i])
    }

    pub fn resolution(&self) -> [u32; 3] {
        self.resolution
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.not_any()
    }

    /// Intersection over union; two empty grids count as identical.
    pub fn iou(&self, other: &Self) -> Result<f64> {
        if self.resolution != other.resolution {
            return Err(Error::ResolutionMismatch(self.resolution, other.resolution));
        }
        let inter = (self.bits.clone() & &other.bits).count_ones();
        let union = (self.bits.clone() | &other.bits).count_ones();
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }
}

/// Marks the cells of a cubic grid over `[-1, 1]^3` that contain a point.
/// Points on the upper boundary fall into the last cell.
pub fn voxelize_points(points: &[[f64; 3]], resolution: u32) -> OccupancyGrid {
    let mut g = OccupancyGrid::empty([resolution; 3]);
    let r = resolution as f64;
    for p in points {
        if p.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            continue;
        }
        let c = p.map(|v| (((v + 1.0) / 2.0 * r).floor() as i32).min(resolution as i32 - 1));
        g.set(&c);
    }
    g
}

/// Mean `1 − IoU` over all unordered pairs.
pub fn pairwise_diversity(samples: &[OccupancyGrid]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::EmptyInput("diversity needs at least two samples"));
    }
    let m = distance_matrix(samples)?;
    let n = samples.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += m[i][j];
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Symmetric matrix of pairwise `1 − IoU` distances.
pub fn distance_matrix(samples: &[OccupancyGrid]) -> Result<Vec<Vec<f64>>> {
    let n = samples.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let d: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| samples[i].iou(&samples[j]).map(|v| 1.0 - v))
        .collect::<Result<_>>()?;
    let mut m = vec![vec![0.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(d) {
        m[i][j] = v;
        m[j][i] = v;
    }
    Ok(m)
}

/// Uniform hash grid over a point set for nearest-neighbor queries.
struct PointIndex<'a> {
    points: &'a [[f64; 3]],
    origin: [f64; 3],
    cell: f64,
    /// Cells per axis spanned by the points.
    span: [i64; 3],
    cells: FxHashMap<[i64; 3], Vec<u32>>,
}

impl<'a> PointIndex<'a> {
    fn new(points: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let mut index = Self {
            points,
            origin: lo,
            cell,
            span: [0; 3],
            cells: FxHashMap::default(),
        };
        for (i, p) in points.iter().enumerate() {
            let c = index.cell_of(p);
            for a in 0..3 {
                index.span[a] = index.span[a].max(c[a] + 1);
            }
            index.cells.entry(c).or_default().push(i as u32);
        }
        index
    }

    fn cell_of(&self, p: &[f64; 3]) -> [i64; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.origin[a]) / self.cell).floor() as i64)
    }

    fn nearest_dist2(&self, q: &[f64; 3]) -> f64 {
        let qc = self.cell_of(q);
        // Beyond this ring every indexed cell has been visited.
        let last = (0..3)
            .map(|a| qc[a].abs().max((self.span[a] - qc[a]).abs()))
            .max()
            .unwrap_or(0);
        let mut best = f64::INFINITY;
        for r in 0..=last {
            for dz in -r..=r {
                for dy in -r..=r {
                    let on_shell = dz.abs() == r || dy.abs() == r;
                    let step = if on_shell { 1 } else { 2 * r.max(1) };
                    let mut dx = -r;
                    while dx <= r {
                        if let Some(ids) = self.cells.get(&[qc[0] + dx, qc[1] + dy, qc[2] + dz]) {
                            for &i in ids {
                                let p = self.points[i as usize];
                                let d2 = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>();
                                best = best.min(d2);
                            }
                        }
                        dx += step;
                    }
                }
            }
            // Cells in later rings are at least `r` cells away along some axis.
            let reach = r as f64 * self.cell;
            if best <= reach * reach {
                break;
            }
        }
        best
    }
}

/// Mean distance from each point of `from` to its nearest point in `to`.
fn directed_mean(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let index = PointIndex::new(to);
    let d: Vec<f64> = from.par_iter().map(|q| index.nearest_dist2(q).sqrt()).collect();
    d.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric chamfer distance: the average of the two directed mean
/// nearest-neighbor distances.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("chamfer needs two nonempty point sets"));
    }
    Ok(0.5 * (directed_mean(a, b) + directed_mean(b, a)))
}
