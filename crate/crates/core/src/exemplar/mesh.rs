//! Triangle meshes, normalization into the unit domain, and PLY/OBJ input.

use std::io::{BufRead, Write};
use std::path::Path;

use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, Property};

use crate::error::{Error, Result};

type V = [f64; 3];

/// Triangles with area below this are dropped on load.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Longest bounding-box axis spans `[-NORMALIZED_HALF_EXTENT, NORMALIZED_HALF_EXTENT]`.
pub const NORMALIZED_HALF_EXTENT: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<V>,
    triangles: Vec<[u32; 3]>,
    colors: Option<Vec<V>>,
    normals: Option<Vec<V>>,
    face_normals: Vec<V>,
    dropped: usize,
}

fn sub(a: V, b: V) -> V {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: V, b: V) -> V {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: V) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl TriangleMesh {
    /// Validates indices and attribute lengths and drops degenerate triangles.
    pub fn new(
        vertices: Vec<V>,
        triangles: Vec<[u32; 3]>,
        colors: Option<Vec<V>>,
        normals: Option<Vec<V>>,
    ) -> Result<Self> {
        if let Some(bad) = vertices.iter().find(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidMesh(format!("non-finite vertex {bad:?}")));
        }
        for (name, attr) in [("color", &colors), ("normal", &normals)] {
            if let Some(a) = attr {
                if a.len() != vertices.len() {
                    return Err(Error::InvalidMesh(format!(
                        "{} {name} entries for {} vertices",
                        a.len(),
                        vertices.len()
                    )));
                }
            }
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= vertices.len())) {
            return Err(Error::InvalidMesh(format!(
                "triangle {t:?} indexes past {} vertices",
                vertices.len()
            )));
        }
        let mut kept = Vec::with_capacity(triangles.len());
        let mut face_normals = Vec::with_capacity(triangles.len());
        for t in &triangles {
            let [a, b, c] = t.map(|i| vertices[i as usize]);
            let n = cross(sub(b, a), sub(c, a));
            let len = norm(n);
            if 0.5 * len < DEGENERATE_AREA {
                continue;
            }
            kept.push(*t);
            face_normals.push(n.map(|x| x / len));
        }
        let dropped = triangles.len() - kept.len();
        if kept.is_empty() {
            return Err(Error::EmptyMesh);
        }
        Ok(Self {
            vertices,
            triangles: kept,
            colors,
            normals,
            face_normals,
            dropped,
        })
    }

    pub fn vertices(&self) -> &[V] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn colors(&self) -> Option<&[V]> {
        self.colors.as_deref()
    }

    pub fn normals(&self) -> Option<&[V]> {
        self.normals.as_deref()
    }

    pub fn face_normal(&self, t: usize) -> V {
        self.face_normals[t]
    }

    /// Number of degenerate triangles removed on construction.
    pub fn dropped_degenerate(&self) -> usize {
        self.dropped
    }

    pub fn corners(&self, t: usize) -> [V; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn bounds(&self) -> (V, V) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for t in &self.triangles {
            for &i in t {
                let v = self.vertices[i as usize];
                for a in 0..3 {
                    lo[a] = lo[a].min(v[a]);
                    hi[a] = hi[a].max(v[a]);
                }
            }
        }
        (lo, hi)
    }

    /// Surface normal at barycentric `bary` of triangle `t`: interpolated
    /// vertex normals when present, otherwise the face normal.
    pub fn normal_at(&self, t: usize, bary: [f64; 3]) -> V {
        if let Some(ns) = &self.normals {
            let idx = self.triangles[t];
            let n = [0, 1, 2].map(|a| (0..3).map(|k| bary[k] * ns[idx[k] as usize][a]).sum::<f64>());
            let len = norm(n);
            if len > 1e-12 {
                return n.map(|x| x / len);
            }
        }
        self.face_normals[t]
    }

    /// Linear RGB at barycentric `bary` of triangle `t`; white without colors.
    pub fn color_at(&self, t: usize, bary: [f64; 3]) -> V {
        match &self.colors {
            Some(cs) => {
                let idx = self.triangles[t];
                [0, 1, 2].map(|a| {
                    (0..3)
                        .map(|k| bary[k] * cs[idx[k] as usize][a])
                        .sum::<f64>()
                        .clamp(0.0, 1.0)
                })
            }
            None => [1.0; 3],
        }
    }

    fn mapped(&self, f: &WorldTransform) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| f.apply(*v)).collect(),
            ..self.clone()
        }
    }
}

/// Uniform scale plus translation: `normalized = scale * world + translation`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WorldTransform {
    pub scale: f64,
    pub translation: V,
}

impl WorldTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: V) -> V {
        [0, 1, 2].map(|a| self.scale * p[a] + self.translation[a])
    }

    pub fn invert(&self, p: V) -> V {
        [0, 1, 2].map(|a| (p[a] - self.translation[a]) / self.scale)
    }
}

/// Centers the bounding box on the origin and scales the longest axis to
/// span `[-0.95, 0.95]`.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<(TriangleMesh, WorldTransform)> {
    let (lo, hi) = mesh.bounds();
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(Error::EmptyMesh);
    }
    let scale = 2.0 * NORMALIZED_HALF_EXTENT / extent;
    let translation = [0, 1, 2].map(|a| -scale * (lo[a] + hi[a]) / 2.0);
    let t = WorldTransform { scale, translation };
    Ok((mesh.mapped(&t), t))
}

/// Loads a PLY or OBJ mesh, chosen by file extension.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    match ext.as_deref() {
        Some("ply") => read_ply_mesh(file),
        Some("obj") => read_obj_mesh(file),
        _ => Err(Error::InvalidMesh(format!(
            "unsupported mesh extension in {}",
            path.display()
        ))),
    }
}

/// Mesh from bytes, sniffing PLY by its magic and assuming OBJ otherwise.
pub fn parse_mesh(bytes: &[u8]) -> Result<TriangleMesh> {
    if bytes.starts_with(b"ply") {
        read_ply_mesh(bytes)
    } else {
        read_obj_mesh(bytes)
    }
}

fn scalar(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        _ => return None,
    })
}

fn indices(p: &Property) -> Option<Vec<i64>> {
    Some(match p {
        Property::ListChar(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUChar(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListShort(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUShort(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListInt(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUInt(v) => v.iter().map(|&x| x as i64).collect(),
        _ => return None,
    })
}

/// Fan-triangulates a polygon, rejecting negative indices.
fn fan(poly: &[i64], out: &mut Vec<[u32; 3]>) -> Result<()> {
    if let Some(&bad) = poly.iter().find(|&&i| i < 0 || i > u32::MAX as i64) {
        return Err(Error::InvalidMesh(format!("face index {bad} out of range")));
    }
    for k in 1..poly.len().saturating_sub(1) {
        out.push([poly[0] as u32, poly[k] as u32, poly[k + 1] as u32]);
    }
    Ok(())
}

/// ASCII or binary PLY with `vertex` (x y z, optional nx ny nz and
/// red green blue) and `face` (vertex_indices) elements.
pub fn read_ply_mesh<R: BufRead>(mut r: R) -> Result<TriangleMesh> {
    let parser = Parser::<DefaultElement>::new();
    let ply = parser
        .read_ply(&mut r)
        .map_err(|e| Error::format("ply", e.to_string()))?;
    let verts = ply
        .payload
        .get("vertex")
        .ok_or_else(|| Error::format("ply", "no vertex element"))?;
    let get = |e: &DefaultElement, k: &str| e.get(k).and_then(scalar);
    let mut vertices = Vec::with_capacity(verts.len());
    for e in verts {
        match (get(e, "x"), get(e, "y"), get(e, "z")) {
            (Some(x), Some(y), Some(z)) => vertices.push([x, y, z]),
            _ => return Err(Error::format("ply", "vertex without x y z")),
        }
    }
    let first = verts.first();
    let has = |k: &str| first.is_some_and(|e| e.contains_key(k));
    let normals = (has("nx") && has("ny") && has("nz")).then(|| {
        verts
            .iter()
            .map(|e| ["nx", "ny", "nz"].map(|k| get(e, k).unwrap_or(0.0)))
            .collect()
    });
    let colors = (has("red") && has("green") && has("blue")).then(|| {
        let integral = first.is_some_and(|e| {
            matches!(e.get("red"), Some(Property::UChar(_)) | Some(Property::UShort(_)))
        });
        let full = if integral {
            match first.and_then(|e| e.get("red")) {
                Some(Property::UShort(_)) => 65535.0,
                _ => 255.0,
            }
        } else {
            1.0
        };
        verts
            .iter()
            .map(|e| ["red", "green", "blue"].map(|k| get(e, k).unwrap_or(0.0) / full))
            .collect()
    });
    let mut triangles = Vec::new();
    if let Some(faces) = ply.payload.get("face") {
        for f in faces {
            let list = f
                .get("vertex_indices")
                .or_else(|| f.get("vertex_index"))
                .and_then(indices)
                .ok_or_else(|| Error::format("ply", "face without vertex_indices list"))?;
            fan(&list, &mut triangles)?;
        }
    }
    TriangleMesh::new(vertices, triangles, colors, normals)
}

/// Wavefront OBJ. Vertex colors (`v x y z r g b`) and normals are kept when
/// every vertex has them.
pub fn read_obj_mesh<R: BufRead>(mut r: R) -> Result<TriangleMesh> {
    let opts = tobj::LoadOptions {
        single_index: true,
        triangulate: true,
        ignore_points: true,
        ignore_lines: true,
    };
    let (models, _) = tobj::load_obj_buf(&mut r, &opts, |_| {
        Err(tobj::LoadError::OpenFileFailed)
    })
    .map_err(|e| Error::format("obj", e.to_string()))?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut colors = Some(Vec::new());
    let mut normals = Some(Vec::new());
    for m in &models {
        let mesh = &m.mesh;
        let base = vertices.len() as u32;
        let n = mesh.positions.len() / 3;
        let triple = |v: &[f32], i: usize| [v[3 * i] as f64, v[3 * i + 1] as f64, v[3 * i + 2] as f64];
        for i in 0..n {
            vertices.push(triple(&mesh.positions, i));
        }
        if mesh.vertex_color.len() == 3 * n {
            if let Some(c) = colors.as_mut() {
                c.extend((0..n).map(|i| triple(&mesh.vertex_color, i)));
            }
        } else {
            colors = None;
        }
        if mesh.normals.len() == 3 * n {
            if let Some(c) = normals.as_mut() {
                c.extend((0..n).map(|i| triple(&mesh.normals, i)));
            }
        } else {
            normals = None;
        }
        for t in mesh.indices.chunks_exact(3) {
            triangles.push([base + t[0], base + t[1], base + t[2]]);
        }
    }
    TriangleMesh::new(vertices, triangles, colors, normals)
}

/// Writes an ASCII PLY mesh with normals and 8-bit colors when present.
pub fn write_ply_mesh<W: Write>(mesh: &TriangleMesh, mut w: W) -> Result<()> {
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if mesh.normals.is_some() {
        writeln!(w, "property double nx\nproperty double ny\nproperty double nz")?;
    }
    if mesh.colors.is_some() {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices\nend_header")?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        write!(w, "{:?} {:?} {:?}", v[0], v[1], v[2])?;
        if let Some(ns) = &mesh.normals {
            write!(w, " {:?} {:?} {:?}", ns[i][0], ns[i][1], ns[i][2])?;
        }
        if let Some(cs) = &mesh.colors {
            let c = cs[i].map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8);
            write!(w, " {} {} {}", c[0], c[1], c[2])?;
        }
        writeln!(w)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}
