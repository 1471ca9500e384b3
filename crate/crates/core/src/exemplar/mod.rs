//! Exemplar ingestion: mesh loading and normalization, finest-level feature
//! sampling and the ground-truth pyramid.

mod bvh;
mod mesh;
pub mod shapes;
mod tribox;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{
    canonical_key, encode_color, pool_level, Coord, FeatureRow, GridFrame, PointPooling, SparseGrid,
    VoxelFeature,
};

pub use bvh::{closest_point_on_triangle, Bvh, Nearest};
pub use mesh::{
    load_mesh, normalize_mesh, parse_mesh, read_obj_mesh, read_ply_mesh, write_ply_mesh, TriangleMesh,
    WorldTransform, DEGENERATE_AREA, NORMALIZED_HALF_EXTENT,
};
pub use tribox::triangle_box_overlap;

/// Resolutions and pooling used to extract a pyramid.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExtractConfig {
    /// Level-1 voxels per axis.
    pub base_resolution: u32,
    pub levels: u32,
    /// Resolution at which the surface is sampled before pooling to the finest level.
    pub sample_resolution: u32,
    pub pooling: PointPooling,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            base_resolution: 16,
            levels: 3,
            sample_resolution: 256,
            pooling: PointPooling::Qem,
        }
    }
}

impl ExtractConfig {
    pub fn finest_resolution(&self) -> u32 {
        self.base_resolution << (self.levels - 1)
    }

    /// Number of pooling steps from the sample resolution to the finest level.
    pub(crate) fn refinements(&self) -> Result<u32> {
        if self.levels == 0 || self.base_resolution < 4 {
            return Err(Error::Config(format!(
                "need at least one level and a base resolution of 4 (got {} levels, base {})",
                self.levels, self.base_resolution
            )));
        }
        let finest = self.finest_resolution();
        let s = self.sample_resolution;
        if s < finest || !s.is_multiple_of(finest) || !(s / finest).is_power_of_two() {
            return Err(Error::IndivisibleResolution {
                resolution: s,
                divisor: finest,
            });
        }
        Ok((s / finest).trailing_zeros())
    }
}

/// Ground-truth grids for levels `1..=L` plus the normalization transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    levels: Vec<SparseGrid>,
    pub transform: WorldTransform,
}

impl Pyramid {
    /// Wraps per-level grids ordered coarsest first.
    pub fn new(levels: Vec<SparseGrid>, transform: WorldTransform) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::EmptyInput("pyramid levels"));
        }
        for (i, g) in levels.iter().enumerate() {
            if g.level() != i as u32 + 1 {
                return Err(Error::InvalidGrid(format!(
                    "pyramid slot {} holds a level {} grid",
                    i + 1,
                    g.level()
                )));
            }
        }
        Ok(Self { levels, transform })
    }

    pub fn num_levels(&self) -> u32 {
        self.levels.len() as u32
    }

    /// Grid at 1-based `level`.
    pub fn level(&self, level: u32) -> &SparseGrid {
        &self.levels[level as usize - 1]
    }

    pub fn levels(&self) -> &[SparseGrid] {
        &self.levels
    }

    pub fn finest(&self) -> &SparseGrid {
        self.levels.last().unwrap()
    }
}

/// Sample-resolution voxels whose closed cube touches any triangle.
fn surface_voxels(mesh: &TriangleMesh, frame: &GridFrame) -> Vec<Coord> {
    let h = frame.voxel_size;
    let half = h.map(|v| v / 2.0);
    let mut marked: Vec<Coord> = (0..mesh.triangles().len())
        .into_par_iter()
        .flat_map_iter(|t| {
            let tri = mesh.corners(t);
            let range = |a: usize| {
                let lo = tri.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
                let hi = tri.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
                let i0 = ((lo - frame.origin[a]) / h[a]).floor() as i64 - 1;
                let i1 = ((hi - frame.origin[a]) / h[a]).floor() as i64 + 1;
                let max = frame.resolution[a] as i64 - 1;
                (i0.clamp(0, max) as i32, i1.clamp(0, max) as i32)
            };
            let (rx, ry, rz) = (range(0), range(1), range(2));
            let mut hits = Vec::new();
            for z in rz.0..=rz.1 {
                for y in ry.0..=ry.1 {
                    for x in rx.0..=rx.1 {
                        let c = [x, y, z];
                        if triangle_box_overlap(frame.voxel_center(&c), half, tri) {
                            hits.push(c);
                        }
                    }
                }
            }
            hits
        })
        .collect();
    marked.par_sort_unstable_by_key(canonical_key);
    marked.dedup();
    marked
}

/// Samples point/normal/color features of every surface voxel at `frame`.
pub fn sample_surface(mesh: &TriangleMesh, frame: GridFrame, level: u32) -> Result<SparseGrid> {
    let coords = surface_voxels(mesh, &frame);
    if coords.is_empty() {
        return Err(Error::NoSurfaceVoxels);
    }
    let bvh = Bvh::new((0..mesh.triangles().len()).map(|t| mesh.corners(t)).collect());
    let features: Vec<FeatureRow> = coords
        .par_iter()
        .map(|c| {
            let center = frame.voxel_center(c);
            let hit = bvh.nearest(center).expect("mesh has triangles");
            let offset = [0, 1, 2].map(|a| {
                ((hit.point[a] - center[a]) / frame.voxel_size[a]).clamp(-0.5, 0.5)
            });
            VoxelFeature {
                offset,
                normal: mesh.normal_at(hit.triangle, hit.barycentric),
                color: encode_color(mesh.color_at(hit.triangle, hit.barycentric)),
                mask: 1.0,
            }
            .to_row()
        })
        .collect();
    Ok(SparseGrid::from_sorted(level, frame, coords, features))
}

/// Finest-level ground truth: samples the (already normalized) mesh at the
/// sample resolution over `[-1, 1]^3` and pools down to the finest level.
pub fn sample_finest(mesh: &TriangleMesh, config: &ExtractConfig) -> Result<SparseGrid> {
    let k = config.refinements()?;
    let frame = GridFrame::unit_domain(config.sample_resolution);
    let mut grid = sample_surface(mesh, frame, config.levels + k)?;
    for _ in 0..k {
        grid = pool_level(&grid, config.pooling)?;
    }
    Ok(grid)
}

/// Pools `finest` (tagged as level `levels`) down to level 1.
pub fn build_pyramid(
    finest: &SparseGrid,
    levels: u32,
    pooling: PointPooling,
    transform: WorldTransform,
) -> Result<Pyramid> {
    let divisor = 1u32 << (levels.max(1) - 1);
    if let Some(&r) = finest.resolution().iter().find(|&&r| r % divisor != 0) {
        return Err(Error::IndivisibleResolution {
            resolution: r,
            divisor,
        });
    }
    let mut grids = vec![finest.clone().with_level(levels)];
    for _ in 1..levels {
        let next = pool_level(grids.last().unwrap(), pooling)?;
        grids.push(next);
    }
    grids.reverse();
    Pyramid::new(grids, transform)
}

/// Normalizes `mesh`, samples it and builds the full pyramid.
pub fn extract_pyramid(mesh: &TriangleMesh, config: &ExtractConfig) -> Result<Pyramid> {
    let (normalized, transform) = normalize_mesh(mesh)?;
    let finest = sample_finest(&normalized, config)?;
    build_pyramid(&finest, config.levels, config.pooling, transform)
}
