//! Kernel-tap neighbour tables for sparse convolution.

use super::SparseGrid;

/// For every kernel tap, the `(output, input)` voxel index pairs it connects.
///
/// Taps are numbered `((dz + r) * k + (dy + r)) * k + (dx + r)` with
/// `r = k / 2`. Neighbours that are not active are simply absent, which gives
/// convolutions zero padding at inactive voxels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    extent: usize,
    len: usize,
    outputs: Vec<Vec<u32>>,
    inputs: Vec<Vec<u32>>,
}

impl NeighborTable {
    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn taps(&self) -> usize {
        self.extent.pow(3)
    }

    /// Number of voxels in the grid the table was built for.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tap_index(&self, offset: [i32; 3]) -> Option<usize> {
        let r = (self.extent / 2) as i32;
        if offset.iter().any(|d| d.abs() > r) {
            return None;
        }
        let k = self.extent as i32;
        Some((((offset[2] + r) * k + (offset[1] + r)) * k + (offset[0] + r)) as usize)
    }

    pub fn tap_offset(&self, tap: usize) -> [i32; 3] {
        let k = self.extent;
        let r = (k / 2) as i32;
        [(tap % k) as i32 - r, ((tap / k) % k) as i32 - r, (tap / (k * k)) as i32 - r]
    }

    /// Output indices of the pairs under `tap`, ascending.
    pub fn outputs(&self, tap: usize) -> &[u32] {
        &self.outputs[tap]
    }

    /// Input indices matching [`Self::outputs`] element by element.
    pub fn inputs(&self, tap: usize) -> &[u32] {
        &self.inputs[tap]
    }

    /// Index of the neighbour of voxel `i` under `tap`, if active.
    pub fn neighbor(&self, i: usize, tap: usize) -> Option<usize> {
        let outs = &self.outputs[tap];
        outs.binary_search(&(i as u32))
            .ok()
            .map(|p| self.inputs[tap][p] as usize)
    }

    /// Total number of connected pairs over all taps.
    pub fn pair_count(&self) -> usize {
        self.outputs.iter().map(Vec::len).sum()
    }
}

/// Builds the neighbour table of `grid` for a cubic kernel of odd `extent`.
pub fn gather_neighborhood(grid: &SparseGrid, extent: usize) -> NeighborTable {
    assert!(extent % 2 == 1, "kernel extent must be odd, got {extent}");
    let r = (extent / 2) as i32;
    let taps = extent.pow(3);
    let mut outputs = vec![Vec::new(); taps];
    let mut inputs = vec![Vec::new(); taps];
    for (i, c) in grid.coords().iter().enumerate() {
        let mut tap = 0;
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if let Some(j) = grid.index_of(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        outputs[tap].push(i as u32);
                        inputs[tap].push(j as u32);
                    }
                    tap += 1;
                }
            }
        }
    }
    NeighborTable {
        extent,
        len: grid.len(),
        outputs,
        inputs,
    }
}
