//! Bounding volume hierarchy over triangles for nearest-surface-point queries.

type V = [f64; 3];

fn sub(a: V, b: V) -> V {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: V, b: V) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn dist2(a: V, b: V) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Closest point on a triangle and its barycentric weights for `(a, b, c)`.
pub fn closest_point_on_triangle(p: V, [a, b, c]: [V; 3]) -> (V, [f64; 3]) {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (lerp(a, ab, v), [1.0 - v, v, 0.0]);
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (lerp(a, ac, w), [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (lerp(b, sub(c, b), w), [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let q = [0, 1, 2].map(|i| a[i] + ab[i] * v + ac[i] * w);
    (q, [1.0 - v - w, v, w])
}

fn lerp(a: V, d: V, t: f64) -> V {
    [a[0] + d[0] * t, a[1] + d[1] * t, a[2] + d[2] * t]
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: V,
    max: V,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    fn grow(&mut self, p: V) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    fn dist2(&self, p: V) -> f64 {
        (0..3)
            .map(|a| {
                let d = (self.min[a] - p[a]).max(p[a] - self.max[a]).max(0.0);
                d * d
            })
            .sum()
    }
}

#[derive(Debug)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;

/// Result of a nearest-point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub triangle: usize,
    pub point: V,
    pub barycentric: [f64; 3],
    pub dist2: f64,
}

/// Median-split BVH over a fixed triangle list.
#[derive(Debug)]
pub struct Bvh {
    triangles: Vec<[V; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl Bvh {
    pub fn new(triangles: Vec<[V; 3]>) -> Self {
        let mut order: Vec<usize> = (0..triangles.len()).collect();
        let centroids: Vec<V> = triangles
            .iter()
            .map(|t| [0, 1, 2].map(|a| (t[0][a] + t[1][a] + t[2][a]) / 3.0))
            .collect();
        let mut nodes = Vec::new();
        if !triangles.is_empty() {
            build(&triangles, &centroids, &mut order, 0, &mut nodes);
        }
        Self {
            triangles,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Globally nearest surface point; ties keep the lowest triangle index.
    pub fn nearest(&self, p: V) -> Option<Nearest> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<Nearest> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let bound = best.map_or(f64::INFINITY, |b| b.dist2);
            if self.nodes[n].bounds().dist2(p) > bound {
                continue;
            }
            match self.nodes[n] {
                Node::Leaf { start, end, .. } => {
                    for &t in &self.order[start..end] {
                        let (q, bary) = closest_point_on_triangle(p, self.triangles[t]);
                        let d = dist2(p, q);
                        let better = match best {
                            None => true,
                            Some(b) => d < b.dist2 || (d == b.dist2 && t < b.triangle),
                        };
                        if better {
                            best = Some(Nearest {
                                triangle: t,
                                point: q,
                                barycentric: bary,
                                dist2: d,
                            });
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let (dl, dr) = (self.nodes[left].bounds().dist2(p), self.nodes[right].bounds().dist2(p));
                    // Visit the nearer child first.
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }
}

fn build(tris: &[[V; 3]], centroids: &[V], order: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &t in order.iter() {
        for p in tris[t] {
            bounds.grow(p);
        }
        cbounds.grow(centroids[t]);
    }
    let id = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            bounds,
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    let axis = (0..3)
        .max_by(|&a, &b| {
            (cbounds.max[a] - cbounds.min[a]).total_cmp(&(cbounds.max[b] - cbounds.min[b]))
        })
        .unwrap();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
    });
    nodes.push(Node::Leaf {
        bounds,
        start: 0,
        end: 0,
    });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build(tris, centroids, lo, offset, nodes);
    let right = build(tris, centroids, hi, offset + mid, nodes);
    nodes[id] = Node::Inner { bounds, left, right };
    id
}
