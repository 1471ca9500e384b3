//! Fine-to-coarse pooling of feature grids.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rustc_hash::FxHashMap;

use super::{canonical_key, Coord, FeatureRow, GridFrame, SparseGrid, CHANNELS, COLOR, MASK, NORMAL};
use crate::error::{Error, Result};

/// Regularization weight per child sample in the quadric solve.
pub const QEM_EPSILON_PER_SAMPLE: f64 = 1e-3;
/// Quadrics with a larger condition estimate fall back to the centroid.
pub const QEM_MAX_CONDITION: f64 = 1e6;

/// How the coarse point sample is chosen from its children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointPooling {
    /// Minimizer of the summed squared distances to the children's tangent planes.
    #[default]
    Qem,
    /// Plain average of the children's points (ablation).
    Centroid,
}

/// Children of each coarse voxel, in canonical coarse order. Child index
/// lists are in canonical fine order.
struct Groups {
    parents: Vec<Coord>,
    children: Vec<Vec<usize>>,
}

fn group_children(fine: &SparseGrid) -> Groups {
    let mut slot: FxHashMap<Coord, usize> = FxHashMap::default();
    let mut parents = Vec::new();
    let mut children: Vec<Vec<usize>> = Vec::new();
    for (i, c) in fine.coords().iter().enumerate() {
        let p = c.map(|v| v >> 1);
        let s = *slot.entry(p).or_insert_with(|| {
            parents.push(p);
            children.push(Vec::with_capacity(8));
            parents.len() - 1
        });
        children[s].push(i);
    }
    let mut order: Vec<usize> = (0..parents.len()).collect();
    order.sort_by_key(|&s| canonical_key(&parents[s]));
    Groups {
        parents: order.iter().map(|&s| parents[s]).collect(),
        children: order.into_iter().map(|s| std::mem::take(&mut children[s])).collect(),
    }
}

fn coarse_frame(fine: &SparseGrid) -> Result<GridFrame> {
    let f = fine.frame();
    if f.resolution.iter().any(|r| r % 2 != 0) {
        return Err(Error::OddResolution(f.resolution));
    }
    if fine.level() <= 1 {
        return Err(Error::LevelUnderflow(fine.level()));
    }
    Ok(GridFrame {
        resolution: f.resolution.map(|r| r / 2),
        voxel_size: f.voxel_size.map(|v| v * 2.0),
        origin: f.origin,
    })
}

/// 2×2×2 pooling of topology, normals, colors and mask.
///
/// A coarse voxel is active iff any child is. Normals and colors are averaged
/// over the active children (normals re-normalized, falling back to the first
/// child's normal when the mean vanishes), the mask is the max. Offsets are
/// left at zero; see [`qem_pool`].
pub fn avg_pool(fine: &SparseGrid) -> Result<SparseGrid> {
    let frame = coarse_frame(fine)?;
    let groups = group_children(fine);
    let features = groups
        .children
        .iter()
        .map(|kids| {
            let mut row = [0.0; CHANNELS];
            let k = kids.len() as f64;
            let mut mask = f64::NEG_INFINITY;
            for &i in kids {
                let f = &fine.features()[i];
                for ch in NORMAL.chain(COLOR) {
                    row[ch] += f[ch];
                }
                mask = mask.max(f[MASK]);
            }
            for ch in NORMAL.chain(COLOR) {
                row[ch] /= k;
            }
            let n = (row[3] * row[3] + row[4] * row[4] + row[5] * row[5]).sqrt();
            if n > 1e-12 {
                for ch in NORMAL {
                    row[ch] /= n;
                }
            } else {
                let first = &fine.features()[kids[0]];
                row[NORMAL].copy_from_slice(&first[NORMAL]);
            }
            row[MASK] = mask;
            row
        })
        .collect();
    Ok(SparseGrid::from_sorted(
        fine.level() - 1,
        frame,
        groups.parents,
        features,
    ))
}

/// Representative point offsets for `coarse_topology` (which must be the
/// pooled topology of `fine`), computed in each coarse voxel's local frame.
pub fn qem_pool(fine: &SparseGrid, coarse_topology: &SparseGrid) -> Result<Vec<[f64; 3]>> {
    pool_points(fine, coarse_topology, PointPooling::Qem)
}

fn pool_points(
    fine: &SparseGrid,
    coarse: &SparseGrid,
    mode: PointPooling,
) -> Result<Vec<[f64; 3]>> {
    let frame = coarse_frame(fine)?;
    let groups = group_children(fine);
    if coarse.frame().resolution != frame.resolution || coarse.coords() != groups.parents.as_slice() {
        return Err(Error::TopologyMismatch(
            "coarse grid is not the pooled topology of the fine grid".into(),
        ));
    }
    let cframe = coarse.frame();
    Ok(groups
        .parents
        .iter()
        .zip(&groups.children)
        .map(|(pc, kids)| {
            let center = cframe.voxel_center(pc);
            let samples: Vec<(Vector3<f64>, Vector3<f64>)> = kids
                .iter()
                .map(|&i| {
                    let w = fine.world_point(i);
                    let local = Vector3::from_fn(|a, _| (w[a] - center[a]) / cframe.voxel_size[a]);
                    let f = &fine.features()[i];
                    (local, Vector3::new(f[3], f[4], f[5]))
                })
                .collect();
            let x = match mode {
                PointPooling::Qem => quadric_point(&samples),
                PointPooling::Centroid => centroid(&samples),
            };
            [0, 1, 2].map(|a| x[a].clamp(-0.5, 0.5))
        })
        .collect())
}

fn centroid(samples: &[(Vector3<f64>, Vector3<f64>)]) -> Vector3<f64> {
    samples.iter().map(|(p, _)| p).sum::<Vector3<f64>>() / samples.len() as f64
}

/// Minimizes `Σ (nᵢ·(x − pᵢ))² + ε‖x − c‖²` with `c` the centroid and
/// `ε = 1e-3·k`.
fn quadric_point(samples: &[(Vector3<f64>, Vector3<f64>)]) -> Vector3<f64> {
    let c = centroid(samples);
    let eps = QEM_EPSILON_PER_SAMPLE * samples.len() as f64;
    let mut a = Matrix3::identity() * eps;
    let mut r = Vector3::zeros();
    for (p, n) in samples {
        let nn = n * n.transpose();
        a += nn;
        r += nn * (p - c);
    }
    let eig = SymmetricEigen::new(a).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || !hi.is_finite() || hi / lo > QEM_MAX_CONDITION {
        return c;
    }
    match a.cholesky() {
        Some(ch) => c + ch.solve(&r),
        None => c,
    }
}

/// One pyramid step: [`avg_pool`] topology and channels plus pooled offsets.
pub fn pool_level(fine: &SparseGrid, mode: PointPooling) -> Result<SparseGrid> {
    let coarse = avg_pool(fine)?;
    let offsets = pool_points(fine, &coarse, mode)?;
    let features: Vec<FeatureRow> = coarse
        .features()
        .iter()
        .zip(offsets)
        .map(|(row, off)| {
            let mut r = *row;
            r[..3].copy_from_slice(&off);
            r
        })
        .collect();
    coarse.with_features(features)
}
