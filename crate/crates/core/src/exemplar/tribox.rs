//! Conservative triangle / axis-aligned box overlap (separating axis test).

type V = [f64; 3];

fn sub(a: V, b: V) -> V {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: V, b: V) -> V {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: V, b: V) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Slack added to every separation test so touching counts as overlap.
const TOUCH_EPS: f64 = 1e-9;

/// True if the triangle touches or overlaps the box `center ± half`.
///
/// Tests the 3 box axes, the triangle normal and the 9 edge cross products;
/// contact on a shared face or edge counts as overlap.
pub fn triangle_box_overlap(center: V, half: V, tri: [V; 3]) -> bool {
    let v = tri.map(|p| sub(p, center));
    let separated = |axis: V| {
        let p = v.map(|q| dot(q, axis));
        let (lo, hi) = (p[0].min(p[1]).min(p[2]), p[0].max(p[1]).max(p[2]));
        let r = half[0] * axis[0].abs() + half[1] * axis[1].abs() + half[2] * axis[2].abs();
        let eps = TOUCH_EPS * (1.0 + axis.iter().map(|a| a.abs()).sum::<f64>());
        lo > r + eps || hi < -r - eps
    };
    for a in 0..3 {
        let mut axis = [0.0; 3];
        axis[a] = 1.0;
        if separated(axis) {
            return false;
        }
    }
    let e = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];
    let n = cross(e[0], e[1]);
    if separated(n) {
        return false;
    }
    for edge in e {
        for a in 0..3 {
            let mut unit = [0.0; 3];
            unit[a] = 1.0;
            let axis = cross(unit, edge);
            if axis != [0.0; 3] && separated(axis) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: V = [0.5; 3];

    #[test]
    fn inside_and_far_away() {
        let t = [[-0.1, -0.1, 0.0], [0.1, -0.1, 0.0], [0.0, 0.1, 0.0]];
        assert!(triangle_box_overlap([0.0; 3], UNIT, t));
        assert!(!triangle_box_overlap([5.0, 0.0, 0.0], UNIT, t));
    }

    #[test]
    fn large_triangle_through_box() {
        let t = [[-10.0, -10.0, 0.2], [10.0, -10.0, 0.2], [0.0, 10.0, 0.2]];
        assert!(triangle_box_overlap([0.0; 3], UNIT, t));
        let above = t.map(|p| [p[0], p[1], 0.7]);
        assert!(!triangle_box_overlap([0.0; 3], UNIT, above));
    }

    #[test]
    fn touching_face_counts() {
        let t = [[-1.0, -1.0, 0.5], [1.0, -1.0, 0.5], [0.0, 1.0, 0.5]];
        assert!(triangle_box_overlap([0.0; 3], UNIT, t));
    }

    #[test]
    fn edge_axis_separates_diagonal_triangle() {
        // Near the corner (1,1,1) but cut off by the plane x + y + z = 1.6.
        let t = [[1.6, 0.0, 0.0], [0.0, 1.6, 0.0], [0.0, 0.0, 1.6]];
        assert!(!triangle_box_overlap([0.0; 3], UNIT, t));
        let closer = [[1.4, 0.0, 0.0], [0.0, 1.4, 0.0], [0.0, 0.0, 1.4]];
        assert!(triangle_box_overlap([0.0; 3], UNIT, closer));
    }

    #[test]
    fn plane_past_corner_is_rejected() {
        // Vertical triangle in the plane x + y = 1.5, beside the box's z edge.
        let t = [[1.2, 0.3, -1.0], [0.3, 1.2, -1.0], [0.75, 0.75, 1.0]];
        assert!(!triangle_box_overlap([0.0; 3], UNIT, t));
        let shifted = t.map(|p| [p[0] - 0.6, p[1] - 0.6, p[2]]);
        assert!(triangle_box_overlap([0.0; 3], UNIT, shifted));
    }
}
