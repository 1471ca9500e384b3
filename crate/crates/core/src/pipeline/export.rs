//! Oriented colored point sets: one point per active voxel, written as
//! binary little-endian PLY for external meshing and viewing.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::exemplar::WorldTransform;
use crate::grid::{decode_color, SparseGrid, COLOR, NORMAL, OFFSET};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedPoint {
    pub position: [f64; 3],
    pub normal: [f64; 3],
    /// Linear RGB in `[0, 1]`.
    pub rgb: [f64; 3],
}

/// Points in the exemplar's original frame. Offsets are clamped to the voxel,
/// normals re-normalized and colors mapped back to `[0, 1]`.
pub fn export_points(grid: &SparseGrid, transform: &WorldTransform) -> Vec<OrientedPoint> {
    grid.coords()
        .iter()
        .zip(grid.features())
        .map(|(c, f)| {
            let offset = f[OFFSET].iter().map(|v| v.clamp(-0.5, 0.5)).collect::<Vec<_>>();
            let n = &f[NORMAL];
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            let normal = if len > 1e-12 {
                [n[0] / len, n[1] / len, n[2] / len]
            } else {
                [0.0; 3]
            };
            let color = [f[COLOR.start], f[COLOR.start + 1], f[COLOR.start + 2]];
            OrientedPoint {
                position: transform.invert(grid.frame().world_point(c, &offset)),
                normal,
                rgb: decode_color(color).map(|v| v.clamp(0.0, 1.0)),
            }
        })
        .collect()
}

/// Normalized-frame positions of a grid's points (no inverse transform).
pub fn grid_points(grid: &SparseGrid) -> Vec<[f64; 3]> {
    (0..grid.len()).map(|i| grid.world_point(i)).collect()
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary little-endian PLY with `x y z nx ny nz` as float and
/// `red green blue` as uchar.
pub fn write_points_ply<W: Write>(points: &[OrientedPoint], mut w: W) -> Result<()> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property float nx\nproperty float ny\nproperty float nz\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    )?;
    let mut buf = Vec::with_capacity(points.len() * 27);
    for p in points {
        for v in p.position.iter().chain(&p.normal) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.extend(p.rgb.map(to_u8));
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn points_ply_bytes(points: &[OrientedPoint]) -> Vec<u8> {
    let mut out = Vec::new();
    write_points_ply(points, &mut out).expect("writing to memory cannot fail");
    out
}

/// Reads a point PLY (any encoding) with positions and optional normals
/// and colors.
pub fn read_points_ply<R: BufRead>(mut r: R) -> Result<Vec<OrientedPoint>> {
    use ply_rs::parser::Parser;
    use ply_rs::ply::{DefaultElement, Property};

    let ply = Parser::<DefaultElement>::new()
        .read_ply(&mut r)
        .map_err(|e| Error::format("ply", e.to_string()))?;
    let Some(vertices) = ply.payload.get("vertex") else {
        return Err(Error::format("ply", "no vertex element"));
    };
    let get = |v: &DefaultElement, k: &str| -> Option<f64> {
        match v.get(k)? {
            Property::Float(x) => Some(f64::from(*x)),
            Property::Double(x) => Some(*x),
            Property::UChar(x) => Some(f64::from(*x) / 255.0),
            _ => None,
        }
    };
    vertices
        .iter()
        .map(|v| {
            let position = [get(v, "x"), get(v, "y"), get(v, "z")];
            if position.iter().any(Option::is_none) {
                return Err(Error::format("ply", "vertex without x y z"));
            }
            Ok(OrientedPoint {
                position: position.map(Option::unwrap),
                normal: ["nx", "ny", "nz"].map(|k| get(v, k).unwrap_or(0.0)),
                rgb: ["red", "green", "blue"].map(|k| get(v, k).unwrap_or(1.0)),
            })
        })
        .collect()
}
