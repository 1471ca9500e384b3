//! The `.svg1` binary grid format.
//!
//! Layout (little endian): magic `SVG1`, u32 level, 3 × u32 resolution,
//! u64 voxel count N, N × 3 i32 coordinates in canonical order, then N records
//! of 10 f32 features in channel order. The world frame is not stored; readers
//! rebuild a centered isotropic frame.

use std::io::{Read, Write};

use super::{canonical_key, Coord, FeatureRow, GridFrame, SparseGrid, CHANNELS};
use crate::error::{Error, Result};

pub const SVG1_MAGIC: &[u8; 4] = b"SVG1";

pub fn write_svg1<W: Write>(grid: &SparseGrid, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(28 + grid.len() * (12 + 4 * CHANNELS));
    buf.extend_from_slice(SVG1_MAGIC);
    buf.extend_from_slice(&grid.level().to_le_bytes());
    for r in grid.resolution() {
        buf.extend_from_slice(&r.to_le_bytes());
    }
    buf.extend_from_slice(&(grid.len() as u64).to_le_bytes());
    for c in grid.coords() {
        for v in c {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for f in grid.features() {
        for v in f {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a grid. `voxel_edge` sets the frame's voxel size; `None` spreads the
/// smallest axis over `[-1, 1]`.
pub fn read_svg1<R: Read>(mut r: R, voxel_edge: Option<f64>) -> Result<SparseGrid> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != SVG1_MAGIC {
        return Err(Error::format("svg1", "bad magic"));
    }
    let level = cur.u32()?;
    let resolution = [cur.u32()?, cur.u32()?, cur.u32()?];
    if resolution.contains(&0) {
        return Err(Error::format("svg1", "zero resolution"));
    }
    let n = cur.u64()? as usize;
    let expected = n
        .checked_mul(12 + 4 * CHANNELS)
        .ok_or_else(|| Error::format("svg1", "voxel count overflows"))?;
    if bytes.len() - cur.pos != expected {
        return Err(Error::format(
            "svg1",
            format!("{n} voxels need {expected} payload bytes, found {}", bytes.len() - cur.pos),
        ));
    }
    let mut coords: Vec<Coord> = Vec::with_capacity(n);
    for _ in 0..n {
        coords.push([cur.i32()?, cur.i32()?, cur.i32()?]);
    }
    let mut features: Vec<FeatureRow> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = [0.0; CHANNELS];
        for v in &mut row {
            *v = cur.f32()? as f64;
        }
        features.push(row);
    }
    if coords.windows(2).any(|w| canonical_key(&w[0]) >= canonical_key(&w[1])) {
        return Err(Error::format("svg1", "coordinates not in canonical order"));
    }
    let edge = voxel_edge.unwrap_or(2.0 / *resolution.iter().min().unwrap() as f64);
    let frame = GridFrame::centered(resolution, edge);
    SparseGrid::new(level, frame, coords.into_iter().zip(features).collect())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::format("svg1", "truncated"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
}
