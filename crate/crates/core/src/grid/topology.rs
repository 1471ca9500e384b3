//! Topology-changing grid operations.

use super::{canonical_key, Coord, FeatureRow, GridFrame, SparseGrid, VoxelBox, CHANNELS, MASK};
use crate::error::{Error, Result};

/// Maximum number of Jacobi sweeps used by [`flood`].
pub const FLOOD_MAX_SWEEPS: usize = 64;

/// Splits every active voxel into its 8 children at `level + 1`.
///
/// Children inherit normal, color and mask. Their offsets are chosen so the
/// parent's point sample is preserved where representable:
/// `2 * parent_offset - corner`, clamped to the child cube.
pub fn subdivide(coarse: &SparseGrid, max_level: u32) -> Result<SparseGrid> {
    if coarse.level() >= max_level {
        return Err(Error::LevelOverflow {
            level: coarse.level(),
            max: max_level,
        });
    }
    let frame = coarse.frame().refined();
    let mut entries = Vec::with_capacity(coarse.len() * 8);
    for (c, f) in coarse.coords().iter().zip(coarse.features()) {
        for bits in 0..8u8 {
            let b = [bits & 1, (bits >> 1) & 1, (bits >> 2) & 1].map(i32::from);
            let child = [0, 1, 2].map(|a| 2 * c[a] + b[a]);
            let mut row = *f;
            for a in 0..3 {
                let corner = b[a] as f64 - 0.5;
                row[a] = (2.0 * f[a] - corner).clamp(-0.5, 0.5);
            }
            entries.push((child, row));
        }
    }
    entries.sort_unstable_by_key(|(c, _)| canonical_key(c));
    let (coords, features) = entries.into_iter().unzip();
    Ok(SparseGrid::from_sorted(coarse.level() + 1, frame, coords, features))
}

/// Keeps the voxels whose mask is non-negative.
pub fn prune(grid: &SparseGrid) -> Result<SparseGrid> {
    let (coords, features): (Vec<Coord>, Vec<FeatureRow>) = grid
        .coords()
        .iter()
        .zip(grid.features())
        .filter(|(_, f)| f[MASK] >= 0.0)
        .map(|(c, f)| (*c, *f))
        .unzip();
    if coords.is_empty() {
        return Err(Error::EmptyResult);
    }
    Ok(SparseGrid::from_sorted(grid.level(), *grid.frame(), coords, features))
}

/// Extends `source` onto `target`'s topology.
///
/// Voxels of `source` keep their features. The remaining "ghost" voxels get
/// mask −1 and the other channels from iterated 3×3×3 averaging over already
/// valued neighbours (Jacobi sweeps, at most [`FLOOD_MAX_SWEEPS`]); ghosts
/// never reached take the mean of all source features.
pub fn flood(target: &SparseGrid, source: &SparseGrid) -> Result<SparseGrid> {
    if source.level() != target.level() || source.resolution() != target.resolution() {
        return Err(Error::TopologyMismatch(format!(
            "flooding level {} {:?} onto level {} {:?}",
            source.level(),
            source.resolution(),
            target.level(),
            target.resolution()
        )));
    }
    if let Some(c) = source.coords().iter().find(|c| !target.contains(c)) {
        return Err(Error::TopologyMismatch(format!(
            "source voxel {c:?} is not in the target topology"
        )));
    }
    let n = target.len();
    let mut values = vec![[0.0; CHANNELS]; n];
    let mut valued = vec![false; n];
    let mut pending = Vec::new();
    for (i, c) in target.coords().iter().enumerate() {
        match source.get(c) {
            Some(f) => {
                values[i] = *f;
                valued[i] = true;
            }
            None => pending.push(i),
        }
    }

    let neighbours = |i: usize| {
        let c = target.coords()[i];
        let mut out = Vec::with_capacity(26);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    if let Some(j) = target.index_of(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        out.push(j);
                    }
                }
            }
        }
        out
    };
    let ghost_neighbours: Vec<Vec<usize>> = pending.iter().map(|&i| neighbours(i)).collect();
    let mut slots: Vec<usize> = (0..pending.len()).collect();

    for _ in 0..FLOOD_MAX_SWEEPS {
        if slots.is_empty() {
            break;
        }
        let mut updates = Vec::new();
        let mut still = Vec::new();
        for &s in &slots {
            let mut acc = [0.0; CHANNELS];
            let mut count = 0usize;
            for &j in &ghost_neighbours[s] {
                if valued[j] {
                    for ch in 0..MASK {
                        acc[ch] += values[j][ch];
                    }
                    count += 1;
                }
            }
            if count == 0 {
                still.push(s);
            } else {
                for v in &mut acc[..MASK] {
                    *v /= count as f64;
                }
                acc[MASK] = -1.0;
                updates.push((pending[s], acc));
            }
        }
        if updates.is_empty() {
            slots = still;
            break;
        }
        for (i, row) in updates {
            values[i] = row;
            valued[i] = true;
        }
        slots = still;
    }

    if !slots.is_empty() {
        let mut mean = [0.0; CHANNELS];
        if !source.is_empty() {
            for f in source.features() {
                for ch in 0..MASK {
                    mean[ch] += f[ch];
                }
            }
            for v in &mut mean[..MASK] {
                *v /= source.len() as f64;
            }
        }
        mean[MASK] = -1.0;
        for s in slots {
            values[pending[s]] = mean;
        }
    }
    target.with_features(values)
}

/// Active voxels inside `bx`, re-based to the box origin.
pub fn crop(grid: &SparseGrid, bx: &VoxelBox) -> Result<SparseGrid> {
    bx.check_fits(grid.resolution())?;
    let f = grid.frame();
    let frame = GridFrame {
        resolution: bx.extent(),
        voxel_size: f.voxel_size,
        origin: [0, 1, 2].map(|a| f.origin[a] + bx.min[a] as f64 * f.voxel_size[a]),
    };
    let mut coords = Vec::new();
    let mut features = Vec::new();
    for (c, row) in grid.coords().iter().zip(grid.features()) {
        if bx.contains(c) {
            coords.push([0, 1, 2].map(|a| c[a] - bx.min[a]));
            features.push(*row);
        }
    }
    Ok(SparseGrid::from_sorted(grid.level(), frame, coords, features))
}

/// Replaces the contents of the box at `dst_origin` with a copy of `src`.
///
/// Destination voxels with no counterpart in the source box are removed;
/// everything outside the destination box is untouched.
pub fn paste(grid: &SparseGrid, src: &VoxelBox, dst_origin: Coord) -> Result<SparseGrid> {
    src.check_fits(grid.resolution())?;
    let delta = [0, 1, 2].map(|a| dst_origin[a] - src.min[a]);
    let dst = src.translated(delta);
    dst.check_fits(grid.resolution())?;
    let mut entries: Vec<(Coord, FeatureRow)> = grid
        .coords()
        .iter()
        .zip(grid.features())
        .filter(|(c, _)| !dst.contains(c))
        .map(|(c, f)| (*c, *f))
        .collect();
    for (c, f) in grid.coords().iter().zip(grid.features()) {
        if src.contains(c) {
            entries.push(([0, 1, 2].map(|a| c[a] + delta[a]), *f));
        }
    }
    entries.sort_unstable_by_key(|(c, _)| canonical_key(c));
    let (coords, features) = entries.into_iter().unzip();
    Ok(SparseGrid::from_sorted(grid.level(), *grid.frame(), coords, features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VoxelFeature;

    fn row_with(mask: f64, color: [f64; 3]) -> FeatureRow {
        VoxelFeature {
            offset: [0.0; 3],
            normal: [0.0, 0.0, 1.0],
            color,
            mask,
        }
        .to_row()
    }

    fn grid(res: u32, entries: Vec<(Coord, FeatureRow)>) -> SparseGrid {
        SparseGrid::new(2, GridFrame::unit_domain(res), entries).unwrap()
    }

    #[test]
    fn subdivide_preserves_parent_point() {
        let mut r = row_with(1.0, [0.0; 3]);
        r[..3].copy_from_slice(&[0.0, 0.0, 0.0]);
        let g = grid(4, vec![([1, 2, 3], r)]);
        let fine = subdivide(&g, 3).unwrap();
        assert_eq!(fine.len(), 8);
        assert_eq!(fine.level(), 3);
        let i = fine.index_of(&[2, 4, 6]).unwrap();
        assert_eq!(fine.feature(i).offset, [0.5; 3]);
        let (pw, cw) = (g.world_point(0), fine.world_point(i));
        for a in 0..3 {
            assert!((pw[a] - cw[a]).abs() < 1e-15);
        }
    }

    #[test]
    fn subdivide_clamps_to_child_cube() {
        let mut r = row_with(-1.0, [0.0; 3]);
        r[..3].copy_from_slice(&[0.5; 3]);
        let g = grid(4, vec![([0, 0, 0], r)]);
        let fine = subdivide(&g, 3).unwrap();
        let hi = fine.index_of(&[1, 1, 1]).unwrap();
        assert_eq!(fine.feature(hi).offset, [0.5; 3]);
        assert!(fine.features().iter().all(|f| f[MASK] == -1.0));
        let (pw, cw) = (g.world_point(0), fine.world_point(hi));
        for a in 0..3 {
            assert!((pw[a] - cw[a]).abs() < 1e-15);
        }
        let lo = fine.index_of(&[0, 0, 0]).unwrap();
        assert_eq!(fine.feature(lo).offset, [0.5; 3]);
    }

    #[test]
    fn subdivide_refuses_finest_level() {
        let g = grid(4, vec![]);
        assert!(matches!(subdivide(&g, 2), Err(Error::LevelOverflow { level: 2, max: 2 })));
    }

    #[test]
    fn prune_filters_by_mask() {
        let all = grid(4, (0..4).map(|x| ([x, 0, 0], row_with(1.0, [0.0; 3]))).collect());
        assert_eq!(prune(&all).unwrap(), all);

        let entries = (0..10)
            .map(|i| {
                let m = if i % 2 == 0 { 1.0 } else { -1.0 };
                ([i % 4, i / 4, 0], row_with(m, [0.0; 3]))
            })
            .collect();
        let g = grid(4, entries);
        let p = prune(&g).unwrap();
        assert_eq!(p.len(), 5);
        assert!(p.features().iter().all(|f| f[MASK] == 1.0));

        let none = grid(4, vec![([0, 0, 0], row_with(-1.0, [0.0; 3]))]);
        assert!(matches!(prune(&none), Err(Error::EmptyResult)));
    }

    #[test]
    fn flood_without_ghosts_is_identity() {
        let g = grid(4, vec![([0, 0, 0], row_with(1.0, [1.0, 0.0, 0.0]))]);
        assert_eq!(flood(&g, &g).unwrap(), g);
    }

    #[test]
    fn flood_single_neighbour() {
        let src = grid(4, vec![([1, 1, 1], row_with(1.0, [1.0, 0.0, 0.0]))]);
        let tgt = grid(
            4,
            vec![([1, 1, 1], [0.0; CHANNELS]), ([2, 1, 1], [0.0; CHANNELS])],
        );
        let out = flood(&tgt, &src).unwrap();
        let ghost = out.feature(out.index_of(&[2, 1, 1]).unwrap());
        assert_eq!(ghost.color, [1.0, 0.0, 0.0]);
        assert_eq!(ghost.mask, -1.0);
    }

    #[test]
    fn flood_two_neighbours_average() {
        let src = grid(
            4,
            vec![
                ([0, 1, 1], row_with(1.0, [2.0, 0.0, 0.0])),
                ([2, 1, 1], row_with(1.0, [0.0, 2.0, 0.0])),
            ],
        );
        let tgt = grid(
            4,
            [[0, 1, 1], [1, 1, 1], [2, 1, 1]]
                .into_iter()
                .map(|c| (c, [0.0; CHANNELS]))
                .collect(),
        );
        let out = flood(&tgt, &src).unwrap();
        let ghost = out.feature(out.index_of(&[1, 1, 1]).unwrap());
        assert_eq!(ghost.color, [1.0, 1.0, 0.0]);
    }

    #[test]
    fn flood_reaches_far_ghosts_and_falls_back_to_mean() {
        let src = grid(
            8,
            vec![
                ([0, 0, 0], row_with(1.0, [2.0, 0.0, 0.0])),
                ([1, 0, 0], row_with(1.0, [0.0, 0.0, 0.0])),
            ],
        );
        // A chain away from the source plus one disconnected ghost.
        let mut coords: Vec<Coord> = (0..6).map(|x| [x, 0, 0]).collect();
        coords.push([7, 7, 7]);
        let tgt = grid(8, coords.into_iter().map(|c| (c, [0.0; CHANNELS])).collect());
        let out = flood(&tgt, &src).unwrap();
        let far = out.feature(out.index_of(&[5, 0, 0]).unwrap());
        assert_eq!(far.color, [0.0; 3]);
        let island = out.feature(out.index_of(&[7, 7, 7]).unwrap());
        assert_eq!(island.color, [1.0, 0.0, 0.0]);
        assert_eq!(island.mask, -1.0);
        // Ghost (2,0,0) only sees (1,0,0) in the first sweep.
        assert_eq!(out.feature(out.index_of(&[2, 0, 0]).unwrap()).color, [0.0; 3]);
    }

    #[test]
    fn flood_rejects_foreign_source() {
        let src = grid(4, vec![([3, 3, 3], row_with(1.0, [0.0; 3]))]);
        let tgt = grid(4, vec![([0, 0, 0], [0.0; CHANNELS])]);
        assert!(matches!(flood(&tgt, &src), Err(Error::TopologyMismatch(_))));
    }

    #[test]
    fn crop_rebases() {
        let g = grid(
            4,
            vec![([1, 1, 1], row_with(1.0, [0.0; 3])), ([3, 0, 0], row_with(1.0, [0.0; 3]))],
        );
        let c = crop(&g, &VoxelBox::new([1, 1, 1], [3, 3, 3]).unwrap()).unwrap();
        assert_eq!(c.coords(), &[[0, 0, 0]]);
        assert_eq!(c.resolution(), [2; 3]);
        assert_eq!(c.world_point(0), g.world_point(g.index_of(&[1, 1, 1]).unwrap()));
        assert_eq!(crop(&g, &VoxelBox::full(g.resolution())).unwrap(), g);
        let empty = crop(&g, &VoxelBox::new([0, 2, 2], [1, 4, 4]).unwrap()).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn paste_moves_and_replaces() {
        let a = row_with(1.0, [1.0, 0.0, 0.0]);
        let b = row_with(1.0, [0.0, 1.0, 0.0]);
        let g = grid(8, vec![([2, 2, 2], a), ([6, 2, 2], b)]);
        let src = VoxelBox::new([2, 2, 2], [3, 3, 3]).unwrap();
        assert_eq!(paste(&g, &src, [2, 2, 2]).unwrap(), g);

        let moved = paste(&g, &src, [5, 2, 2]).unwrap();
        assert_eq!(moved.get(&[5, 2, 2]), Some(&a));
        assert_eq!(moved.get(&[2, 2, 2]), Some(&a));

        let hollow = VoxelBox::new([0, 0, 0], [2, 2, 2]).unwrap();
        let cleared = paste(&g, &hollow, [6, 2, 2]).unwrap();
        assert!(cleared.get(&[6, 2, 2]).is_none());
        assert_eq!(cleared.len(), 1);

        assert!(paste(&g, &src, [7, 2, 2]).is_ok());
        assert!(matches!(paste(&g, &src, [8, 2, 2]), Err(Error::OutOfBounds { .. })));
    }
}
