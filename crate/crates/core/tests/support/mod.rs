//! Dense brute-force oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sparsegen_core::grid::{Coord, FeatureRow, GridFrame, SparseGrid, CHANNELS, MASK};
use sparsegen_core::net::ConvShape;

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

pub fn grid_of(coords: &[Coord], res: u32, rng: &mut ChaCha8Rng) -> SparseGrid {
    let entries = coords
        .iter()
        .map(|c| (*c, std::array::from_fn(|_| rng.gen_range(-1.0..1.0))))
        .collect();
    SparseGrid::new(2, GridFrame::unit_domain(res), entries).unwrap()
}

/// Six voxels with a mix of face, edge and corner adjacency.
pub fn six_voxels(rng: &mut ChaCha8Rng) -> SparseGrid {
    grid_of(&[[2, 2, 2], [3, 2, 2], [3, 3, 2], [2, 2, 3], [4, 4, 3], [1, 3, 4]], 8, rng)
}

pub fn randomize(values: &mut [f64], scale: f64, rng: &mut ChaCha8Rng) {
    for v in values {
        *v = rng.gen_range(-scale..scale);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense zero-padded cross-correlation over the grid's full resolution.
pub fn dense_conv(g: &SparseGrid, x: &[f64], w: &[f64], b: &[f64], shape: ConvShape) -> Vec<f64> {
    let res = g.resolution().map(|r| r as i32);
    let at = |c: [i32; 3]| ((c[2] * res[1] + c[1]) * res[0] + c[0]) as usize;
    let mut dense = vec![0.0; (res[0] * res[1] * res[2]) as usize * shape.cin];
    for (i, c) in g.coords().iter().enumerate() {
        let o = at(*c) * shape.cin;
        dense[o..o + shape.cin].copy_from_slice(&x[i * shape.cin..(i + 1) * shape.cin]);
    }
    let k = shape.extent as i32;
    let r = k / 2;
    let mut y = Vec::new();
    for c in g.coords() {
        for o in 0..shape.cout {
            let mut acc = b[o];
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let n = [c[0] + dx, c[1] + dy, c[2] + dz];
                        if (0..3).any(|a| n[a] < 0 || n[a] >= res[a]) {
                            continue;
                        }
                        let tap = (((dz + r) * k + (dy + r)) * k + (dx + r)) as usize;
                        for i in 0..shape.cin {
                            acc += w[(o * shape.cin + i) * shape.taps() + tap] * dense[at(n) * shape.cin + i];
                        }
                    }
                }
            }
            y.push(acc);
        }
    }
    y
}

pub struct DenseCoarse {
    pub coord: Coord,
    pub row: FeatureRow,
    pub point: [f64; 3],
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Solves `m x = b` by Cramer's rule.
fn cramer(m: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let d = det3(m);
    [0, 1, 2].map(|col| {
        let mut k = m;
        for r in 0..3 {
            k[r][col] = b[r];
        }
        det3(k) / d
    })
}

/// Pools by scanning a dense array of every coarse cell's 8 children.
pub fn dense_pool(fine: &SparseGrid) -> Vec<DenseCoarse> {
    let res = fine.resolution();
    let mut dense: Vec<Option<FeatureRow>> = vec![None; (res[0] * res[1] * res[2]) as usize];
    let at = |c: [u32; 3]| ((c[2] * res[1] + c[1]) * res[0] + c[0]) as usize;
    for (c, f) in fine.coords().iter().zip(fine.features()) {
        dense[at(c.map(|v| v as u32))] = Some(*f);
    }
    let fe = fine.voxel_size();
    let ce = fe.map(|v| 2.0 * v);
    let origin = fine.frame().origin;
    let mut out = Vec::new();
    for z in 0..res[2] / 2 {
        for y in 0..res[1] / 2 {
            for x in 0..res[0] / 2 {
                let mut kids: Vec<([f64; 3], FeatureRow)> = Vec::new();
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let c = [2 * x + dx, 2 * y + dy, 2 * z + dz];
                            if let Some(f) = dense[at(c)] {
                                let p = [0, 1, 2].map(|a| {
                                    origin[a] + (c[a] as f64 + 0.5 + f[a]) * fe[a]
                                });
                                kids.push((p, f));
                            }
                        }
                    }
                }
                if kids.is_empty() {
                    continue;
                }
                let k = kids.len() as f64;
                let mut row = [0.0; CHANNELS];
                row[MASK] = -1.0;
                for (_, f) in &kids {
                    for ch in 3..9 {
                        row[ch] += f[ch] / k;
                    }
                    row[MASK] = row[MASK].max(f[MASK]);
                }
                let n = (row[3] * row[3] + row[4] * row[4] + row[5] * row[5]).sqrt();
                if n > 1e-12 {
                    for ch in 3..6 {
                        row[ch] /= n;
                    }
                } else {
                    row[3..6].copy_from_slice(&kids[0].1[3..6]);
                }
                // Quadric in coarse-local units, regularized toward the centroid.
                let center = [x, y, z].map(|v| v as f64);
                let local: Vec<[f64; 3]> = kids
                    .iter()
                    .map(|(p, _)| {
                        [0, 1, 2].map(|a| (p[a] - origin[a]) / ce[a] - center[a] - 0.5)
                    })
                    .collect();
                let mut cen = [0.0; 3];
                for l in &local {
                    for a in 0..3 {
                        cen[a] += l[a] / k;
                    }
                }
                let eps = 1e-3 * k;
                let mut m = [[0.0; 3]; 3];
                let mut b = [0.0; 3];
                for a in 0..3 {
                    m[a][a] = eps;
                    b[a] = eps * cen[a];
                }
                for ((_, f), l) in kids.iter().zip(&local) {
                    let nn = [f[3], f[4], f[5]];
                    for r in 0..3 {
                        for c in 0..3 {
                            m[r][c] += nn[r] * nn[c];
                            b[r] += nn[r] * nn[c] * l[c];
                        }
                    }
                }
                let point = cramer(m, b).map(|v| v.clamp(-0.5, 0.5));
                out.push(DenseCoarse {
                    coord: [x, y, z].map(|v| v as i32),
                    row,
                    point,
                });
            }
        }
    }
    out
}


/// Flood over a dense array: Jacobi sweeps of 26-neighbour means, then the
/// source mean for anything unreachable.
pub fn dense_flood(target: &SparseGrid, source: &SparseGrid, max_sweeps: usize) -> Vec<FeatureRow> {
    let res = target.resolution().map(|r| r as i32);
    let at = |c: Coord| ((c[2] * res[1] + c[1]) * res[0] + c[0]) as usize;
    let cells = (res[0] * res[1] * res[2]) as usize;
    let mut inside = vec![false; cells];
    let mut value: Vec<Option<FeatureRow>> = vec![None; cells];
    for c in target.coords() {
        inside[at(*c)] = true;
    }
    for (c, f) in source.coords().iter().zip(source.features()) {
        value[at(*c)] = Some(*f);
    }
    for _ in 0..max_sweeps {
        let mut next = value.clone();
        let mut changed = false;
        for c in target.coords() {
            if value[at(*c)].is_some() {
                continue;
            }
            let mut acc = [0.0; CHANNELS];
            let mut n = 0.0;
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let q = [c[0] + dx, c[1] + dy, c[2] + dz];
                        if (0..3).any(|a| q[a] < 0 || q[a] >= res[a]) || !inside[at(q)] {
                            continue;
                        }
                        if let Some(f) = value[at(q)] {
                            for ch in 0..MASK {
                                acc[ch] += f[ch];
                            }
                            n += 1.0;
                        }
                    }
                }
            }
            if n > 0.0 {
                for v in &mut acc[..MASK] {
                    *v /= n;
                }
                acc[MASK] = -1.0;
                next[at(*c)] = Some(acc);
                changed = true;
            }
        }
        value = next;
        if !changed {
            break;
        }
    }
    let mut mean = [0.0; CHANNELS];
    for f in source.features() {
        for ch in 0..MASK {
            mean[ch] += f[ch] / source.len() as f64;
        }
    }
    mean[MASK] = -1.0;
    target.coords().iter().map(|c| value[at(*c)].unwrap_or(mean)).collect()
}

/// Crop by scanning every cell of the box.
pub fn dense_crop(grid: &SparseGrid, min: Coord, max: Coord) -> Vec<(Coord, FeatureRow)> {
    let mut out = Vec::new();
    for z in min[2]..max[2] {
        for y in min[1]..max[1] {
            for x in min[0]..max[0] {
                if let Some(f) = grid.get(&[x, y, z]) {
                    out.push(([x - min[0], y - min[1], z - min[2]], *f));
                }
            }
        }
    }
    out.sort_by_key(|(c, _)| (c[2], c[1], c[0]));
    out
}
