//! Sparse voxel grids carrying the 10-channel point/normal/color/mask payload.
//!
//! A [`SparseGrid`] is an immutable set of active integer coordinates with one
//! feature row per coordinate. Coordinates are kept in canonical order (z, then
//! y, then x) so that every derived grid, file and network pass is
//! deterministic. All operations in this module return new grids.

mod io;
mod neighbors;
mod pool;
mod topology;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};

pub use io::{read_svg1, write_svg1, SVG1_MAGIC};
pub use neighbors::{gather_neighborhood, NeighborTable};
pub use pool::{avg_pool, pool_level, qem_pool, PointPooling};
pub use topology::{crop, flood, paste, prune, subdivide, FLOOD_MAX_SWEEPS};

/// Number of feature channels per voxel.
pub const CHANNELS: usize = 10;

/// Integer voxel coordinate `[x, y, z]`.
pub type Coord = [i32; 3];

/// Raw feature row: offset xyz, normal xyz, color rgb, mask.
pub type FeatureRow = [f64; CHANNELS];

pub const OFFSET: std::ops::Range<usize> = 0..3;
pub const NORMAL: std::ops::Range<usize> = 3..6;
pub const COLOR: std::ops::Range<usize> = 6..9;
pub const MASK: usize = 9;

/// Per-voxel payload.
///
/// `offset` is the point sample relative to the voxel center in voxel-edge
/// units, `color` is linear RGB mapped to `4 * (rgb - 0.5)` and `mask` is +1
/// for surface voxels and -1 for voxels that should be pruned.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VoxelFeature {
    pub offset: [f64; 3],
    pub normal: [f64; 3],
    pub color: [f64; 3],
    pub mask: f64,
}

impl VoxelFeature {
    pub fn to_row(&self) -> FeatureRow {
        let mut r = [0.0; CHANNELS];
        r[OFFSET].copy_from_slice(&self.offset);
        r[NORMAL].copy_from_slice(&self.normal);
        r[COLOR].copy_from_slice(&self.color);
        r[MASK] = self.mask;
        r
    }

    pub fn from_row(r: &FeatureRow) -> Self {
        Self {
            offset: [r[0], r[1], r[2]],
            normal: [r[3], r[4], r[5]],
            color: [r[6], r[7], r[8]],
            mask: r[9],
        }
    }
}

/// Maps linear RGB in `[0, 1]` to the feature color range `[-2, 2]`.
pub fn encode_color(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| 4.0 * (c - 0.5))
}

/// Inverse of [`encode_color`], clamped to `[0, 1]`.
pub fn decode_color(color: [f64; 3]) -> [f64; 3] {
    color.map(|c| (c / 4.0 + 0.5).clamp(0.0, 1.0))
}

/// Sort key for the canonical z-major order.
#[inline]
pub fn canonical_key(c: &Coord) -> (i32, i32, i32) {
    (c[2], c[1], c[0])
}

/// Placement of a grid's index space in the normalized world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    pub resolution: [u32; 3],
    pub voxel_size: [f64; 3],
    /// World position of the minimum corner of voxel `(0, 0, 0)`.
    pub origin: [f64; 3],
}

impl GridFrame {
    /// Isotropic frame centered on the world origin.
    pub fn centered(resolution: [u32; 3], voxel_edge: f64) -> Self {
        let origin = [0, 1, 2].map(|a| -(resolution[a] as f64) * voxel_edge / 2.0);
        Self {
            resolution,
            voxel_size: [voxel_edge; 3],
            origin,
        }
    }

    /// The `[-1, 1]^3` domain split into `resolution` voxels per axis.
    pub fn unit_domain(resolution: u32) -> Self {
        Self::centered([resolution; 3], 2.0 / resolution as f64)
    }

    pub fn contains(&self, c: &Coord) -> bool {
        (0..3).all(|a| c[a] >= 0 && (c[a] as u32) < self.resolution[a])
    }

    pub fn voxel_center(&self, c: &Coord) -> [f64; 3] {
        [0, 1, 2].map(|a| self.origin[a] + (c[a] as f64 + 0.5) * self.voxel_size[a])
    }

    /// World position of a point stored as `offset` inside voxel `c`.
    pub fn world_point(&self, c: &Coord, offset: &[f64]) -> [f64; 3] {
        let center = self.voxel_center(c);
        [0, 1, 2].map(|a| center[a] + offset[a] * self.voxel_size[a])
    }

    /// Frame of the next finer level (resolution doubled, same origin).
    pub fn refined(&self) -> Self {
        Self {
            resolution: self.resolution.map(|r| r * 2),
            voxel_size: self.voxel_size.map(|v| v / 2.0),
            origin: self.origin,
        }
    }

    pub fn dense_count(&self) -> usize {
        self.resolution.iter().map(|&r| r as usize).product()
    }
}

/// Half-open integer box `[min, max)` in a level's index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VoxelBox {
    pub min: Coord,
    pub max: Coord,
}

impl VoxelBox {
    pub fn new(min: Coord, max: Coord) -> Result<Self> {
        if (0..3).any(|a| min[a] >= max[a]) {
            return Err(Error::InvalidBox(format!(
                "min {min:?} must be below max {max:?} on every axis"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn full(resolution: [u32; 3]) -> Self {
        Self {
            min: [0; 3],
            max: resolution.map(|r| r as i32),
        }
    }

    pub fn extent(&self) -> [u32; 3] {
        [0, 1, 2].map(|a| (self.max[a] - self.min[a]) as u32)
    }

    pub fn contains(&self, c: &Coord) -> bool {
        (0..3).all(|a| c[a] >= self.min[a] && c[a] < self.max[a])
    }

    pub fn fits(&self, resolution: [u32; 3]) -> bool {
        (0..3).all(|a| self.min[a] >= 0 && self.max[a] as i64 <= resolution[a] as i64)
    }

    pub fn translated(&self, delta: Coord) -> Self {
        Self {
            min: [0, 1, 2].map(|a| self.min[a] + delta[a]),
            max: [0, 1, 2].map(|a| self.max[a] + delta[a]),
        }
    }

    pub(crate) fn check_fits(&self, resolution: [u32; 3]) -> Result<()> {
        if self.fits(resolution) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                min: self.min,
                max: self.max,
                resolution,
            })
        }
    }
}

/// Level-tagged sparse voxel grid.
///
/// Immutable after construction; coordinates are unique, in bounds and in
/// canonical order, and `features[i]` belongs to `coords[i]`.
#[derive(Debug, Clone)]
pub struct SparseGrid {
    level: u32,
    frame: GridFrame,
    coords: Vec<Coord>,
    features: Vec<FeatureRow>,
    index: FxHashMap<Coord, u32>,
}

impl PartialEq for SparseGrid {
    fn eq(&self, other: &Self) -> bool {
        self.level == other.level
            && self.frame == other.frame
            && self.coords == other.coords
            && self.features == other.features
    }
}

impl SparseGrid {
    /// Builds a grid from unordered `(coord, features)` entries.
    pub fn new(level: u32, frame: GridFrame, mut entries: Vec<(Coord, FeatureRow)>) -> Result<Self> {
        if frame.resolution.contains(&0) {
            return Err(Error::InvalidGrid(format!(
                "resolution {:?} has a zero axis",
                frame.resolution
            )));
        }
        if let Some((c, _)) = entries.iter().find(|(c, _)| !frame.contains(c)) {
            return Err(Error::InvalidGrid(format!(
                "coordinate {c:?} outside resolution {:?}",
                frame.resolution
            )));
        }
        entries.sort_by_key(|(c, _)| canonical_key(c));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidGrid(format!("duplicate coordinate {:?}", w[0].0)));
        }
        let (coords, features) = entries.into_iter().unzip();
        Ok(Self::from_sorted(level, frame, coords, features))
    }

    /// Trusted constructor: `coords` must already be canonical, unique and in bounds.
    pub(crate) fn from_sorted(
        level: u32,
        frame: GridFrame,
        coords: Vec<Coord>,
        features: Vec<FeatureRow>,
    ) -> Self {
        debug_assert_eq!(coords.len(), features.len());
        debug_assert!(coords
            .windows(2)
            .all(|w| canonical_key(&w[0]) < canonical_key(&w[1])));
        let mut index = FxHashMap::with_capacity_and_hasher(coords.len(), Default::default());
        for (i, c) in coords.iter().enumerate() {
            index.insert(*c, i as u32);
        }
        Self {
            level,
            frame,
            coords,
            features,
            index,
        }
    }

    /// Every voxel of `frame` active, features zero.
    pub fn dense(level: u32, frame: GridFrame) -> Self {
        let [rx, ry, rz] = frame.resolution.map(|r| r as i32);
        let mut coords = Vec::with_capacity(frame.dense_count());
        for z in 0..rz {
            for y in 0..ry {
                for x in 0..rx {
                    coords.push([x, y, z]);
                }
            }
        }
        let features = vec![[0.0; CHANNELS]; coords.len()];
        Self::from_sorted(level, frame, coords, features)
    }

    /// Same topology and frame, new feature rows.
    pub fn with_features(&self, features: Vec<FeatureRow>) -> Result<Self> {
        if features.len() != self.coords.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for {} voxels",
                features.len(),
                self.coords.len()
            )));
        }
        Ok(Self {
            level: self.level,
            frame: self.frame,
            coords: self.coords.clone(),
            features,
            index: self.index.clone(),
        })
    }

    pub fn with_level(mut self, level: u32) -> Self {
        self.level = level;
        self
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn frame(&self) -> &GridFrame {
        &self.frame
    }

    pub fn resolution(&self) -> [u32; 3] {
        self.frame.resolution
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.frame.voxel_size
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn features(&self) -> &[FeatureRow] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> VoxelFeature {
        VoxelFeature::from_row(&self.features[i])
    }

    pub fn index_of(&self, c: &Coord) -> Option<usize> {
        self.index.get(c).map(|&i| i as usize)
    }

    pub fn contains(&self, c: &Coord) -> bool {
        self.index.contains_key(c)
    }

    pub fn get(&self, c: &Coord) -> Option<&FeatureRow> {
        self.index_of(c).map(|i| &self.features[i])
    }

    /// World position of voxel `i`'s point sample.
    pub fn world_point(&self, i: usize) -> [f64; 3] {
        self.frame.world_point(&self.coords[i], &self.features[i][OFFSET])
    }

    pub fn same_topology(&self, other: &SparseGrid) -> bool {
        self.frame.resolution == other.frame.resolution && self.coords == other.coords
    }

    /// Clamps features to their valid ranges: offsets to `[-0.5, 0.5]`,
    /// colors to `[-2, 2]`, mask to `[-1, 1]`, normals to unit length.
    pub fn finalized(&self) -> SparseGrid {
        let features = self.features.iter().map(finalize_row).collect();
        Self {
            level: self.level,
            frame: self.frame,
            coords: self.coords.clone(),
            features,
            index: self.index.clone(),
        }
    }
}

pub(crate) fn finalize_row(r: &FeatureRow) -> FeatureRow {
    clamp_row(r, true)
}

/// Box-clamps a clean-grid estimate. Normals longer than 1 are shortened;
/// with `unit_normals` every nonzero normal is rescaled to length 1.
pub(crate) fn clamp_row(r: &FeatureRow, unit_normals: bool) -> FeatureRow {
    let mut out = *r;
    for v in &mut out[OFFSET] {
        *v = v.clamp(-0.5, 0.5);
    }
    let n = (r[3] * r[3] + r[4] * r[4] + r[5] * r[5]).sqrt();
    if n > 1.0 || (unit_normals && n > 1e-12) {
        for v in &mut out[NORMAL] {
            *v /= n;
        }
    }
    for v in &mut out[COLOR] {
        *v = v.clamp(-2.0, 2.0);
    }
    out[MASK] = out[MASK].clamp(-1.0, 1.0);
    out
}
