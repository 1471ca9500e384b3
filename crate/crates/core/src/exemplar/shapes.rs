//! Procedural exemplar meshes.

use super::mesh::TriangleMesh;

type V = [f64; 3];

/// Flat color keyed to a face's outward normal.
fn face_color(n: V) -> V {
    [0.5 + 0.4 * n[0], 0.5 + 0.4 * n[1], 0.5 + 0.3 * n[2]]
}

#[derive(Default)]
struct Builder {
    vertices: Vec<V>,
    triangles: Vec<[u32; 3]>,
    colors: Vec<V>,
    normals: Vec<V>,
}

impl Builder {
    /// Adds a planar quad with its own vertices, wound to face `outward`.
    fn quad(&mut self, corners: [V; 4], outward: V, color: Option<V>) {
        let base = self.vertices.len() as u32;
        for c in corners {
            self.vertices.push(c);
            self.normals.push(outward);
            self.colors.push(color.unwrap_or_else(|| face_color(outward)));
        }
        let e1 = [0, 1, 2].map(|a| corners[1][a] - corners[0][a]);
        let e2 = [0, 1, 2].map(|a| corners[2][a] - corners[0][a]);
        let n = [
            e1[1] * e2[2] - e1[2] * e2[1],
            e1[2] * e2[0] - e1[0] * e2[2],
            e1[0] * e2[1] - e1[1] * e2[0],
        ];
        let flip = n[0] * outward[0] + n[1] * outward[1] + n[2] * outward[2] < 0.0;
        let (a, b, c, d) = (base, base + 1, base + 2, base + 3);
        if flip {
            self.triangles.push([a, c, b]);
            self.triangles.push([a, d, c]);
        } else {
            self.triangles.push([a, b, c]);
            self.triangles.push([a, c, d]);
        }
    }

    fn finish(self, colored: bool) -> TriangleMesh {
        let colors = colored.then_some(self.colors);
        TriangleMesh::new(self.vertices, self.triangles, colors, Some(self.normals))
            .expect("procedural mesh is valid")
    }
}

/// Axis-aligned box with flat-shaded faces. `color` overrides the per-face
/// palette; pass `None` for direction-keyed colors.
pub fn box_mesh(min: V, max: V, color: Option<V>) -> TriangleMesh {
    let mut b = Builder::default();
    add_box(&mut b, min, max, color);
    b.finish(true)
}

fn add_box(b: &mut Builder, lo: V, hi: V, color: Option<V>) {
    for a in 0..3 {
        let (u, v) = ((a + 1) % 3, (a + 2) % 3);
        for (side, s) in [(lo[a], -1.0), (hi[a], 1.0)] {
            let corner = |cu: f64, cv: f64| {
                let mut p = [0.0; 3];
                p[a] = side;
                p[u] = cu;
                p[v] = cv;
                p
            };
            let mut n = [0.0; 3];
            n[a] = s;
            b.quad(
                [corner(lo[u], lo[v]), corner(hi[u], lo[v]), corner(hi[u], hi[v]), corner(lo[u], hi[v])],
                n,
                color,
            );
        }
    }
}

/// Box of `size` centered at the origin with a rectangular notch of
/// `notch = [width_x, depth_z]` cut along its top +x edge (through all of y).
pub fn notched_box(size: V, notch: [f64; 2]) -> TriangleMesh {
    let [sx, sy, sz] = size;
    let [nx, nz] = notch;
    assert!(nx > 0.0 && nx < sx && nz > 0.0 && nz < sz, "notch must fit inside the box");
    let (x0, y0, z0) = (-sx / 2.0, -sy / 2.0, -sz / 2.0);
    let (x1, y1, z1) = (x0 + sx, y0 + sy, z0 + sz);
    let (xn, zn) = (x1 - nx, z1 - nz);
    let mut b = Builder::default();
    // Profile in the xz plane, counter-clockwise, extruded along y.
    let profile = [[x0, z0], [x1, z0], [x1, zn], [xn, zn], [xn, z1], [x0, z1]];
    for k in 0..profile.len() {
        let p = profile[k];
        let q = profile[(k + 1) % profile.len()];
        let (dx, dz) = (q[0] - p[0], q[1] - p[1]);
        let len = (dx * dx + dz * dz).sqrt();
        let outward = [dz / len, 0.0, -dx / len];
        b.quad(
            [[p[0], y0, p[1]], [q[0], y0, q[1]], [q[0], y1, q[1]], [p[0], y1, p[1]]],
            outward,
            None,
        );
    }
    for (y, s) in [(y0, -1.0), (y1, 1.0)] {
        let n = [0.0, s, 0.0];
        b.quad([[x0, y, z0], [xn, y, z0], [xn, y, z1], [x0, y, z1]], n, None);
        b.quad([[xn, y, z0], [x1, y, z0], [x1, y, zn], [xn, y, zn]], n, None);
    }
    b.finish(true)
}

/// Square plate `[-half, half]^2` in the plane `z = 0`, normal +z.
pub fn plate(half: f64) -> TriangleMesh {
    let mut b = Builder::default();
    b.quad(
        [[-half, -half, 0.0], [half, -half, 0.0], [half, half, 0.0], [-half, half, 0.0]],
        [0.0, 0.0, 1.0],
        Some([1.0; 3]),
    );
    b.finish(false)
}

/// Subdivided icosahedron of the given radius with smooth vertex normals.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<V> = vec![
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ];
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    let unit = |v: V| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.map(|c| c / n)
    };
    verts = verts.into_iter().map(unit).collect();
    for _ in 0..subdivisions {
        let mut mid = std::collections::HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<V>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (verts[a as usize], verts[b as usize]);
                verts.push(unit([0, 1, 2].map(|i| (p[i] + q[i]) / 2.0)));
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let normals = verts.clone();
    let positions = verts.iter().map(|v| v.map(|c| c * radius)).collect();
    TriangleMesh::new(positions, faces, None, Some(normals)).expect("icosphere is valid")
}
