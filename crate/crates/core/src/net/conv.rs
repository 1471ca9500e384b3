//! Sparse 3D convolution over a neighbour table, as one GEMM per kernel tap.

use crate::error::{Error, Result};
use crate::grid::NeighborTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    /// Kernel edge length, 1 or 3.
    pub extent: usize,
}

impl ConvShape {
    pub fn taps(&self) -> usize {
        self.extent.pow(3)
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.taps()
    }

    fn center(&self) -> usize {
        (self.taps() - 1) / 2
    }
}

/// `c = a·b + beta·c` on strided row/column-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs + 1;
    assert!(k == 0 || a.len() >= span(m, k, rsa, csa));
    assert!(k == 0 || b.len() >= span(k, n, rsb, csb));
    assert!(c.len() >= span(m, n, rsc, csc));
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is an exclusive borrow distinct from `a` and `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn gather(src: &[f64], width: usize, idx: &[u32], dst: &mut Vec<f64>) {
    dst.clear();
    for &i in idx {
        let i = i as usize;
        dst.extend_from_slice(&src[i * width..(i + 1) * width]);
    }
}

fn scatter_add(dst: &mut [f64], width: usize, idx: &[u32], src: &[f64]) {
    for (p, &i) in idx.iter().enumerate() {
        let i = i as usize;
        let row = &mut dst[i * width..(i + 1) * width];
        for (d, s) in row.iter_mut().zip(&src[p * width..(p + 1) * width]) {
            *d += s;
        }
    }
}

fn check(shape: &ConvShape, n: usize, table: Option<&NeighborTable>) -> Result<()> {
    if shape.extent > 1 {
        match table {
            Some(t) if t.extent() == shape.extent && t.len() == n => {}
            Some(t) => {
                return Err(Error::ShapeMismatch(format!(
                    "neighbour table is extent {} over {} voxels, layer needs extent {} over {n}",
                    t.extent(),
                    t.len(),
                    shape.extent
                )))
            }
            None => {
                return Err(Error::ShapeMismatch(format!(
                    "extent {} convolution needs a neighbour table",
                    shape.extent
                )))
            }
        }
    }
    Ok(())
}

/// `y[n] = bias + Σ_tap W_tap · x[neighbour(n, tap)]`, absent neighbours
/// contributing zero. `x` is `n × cin` and `y` is `n × cout`, row major;
/// `weight` is laid out `(cout, cin, tap)`.
pub fn conv_forward(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    shape: ConvShape,
    table: Option<&NeighborTable>,
) -> Result<Vec<f64>> {
    let ConvShape { cin, cout, .. } = shape;
    let n = x.len() / cin.max(1);
    if x.len() != n * cin || weight.len() != shape.weight_len() || bias.len() != cout {
        return Err(Error::ShapeMismatch(format!(
            "conv {cin}->{cout} got {} inputs, {} weights, {} biases",
            x.len(),
            weight.len(),
            bias.len()
        )));
    }
    check(&shape, n, table)?;
    let k = shape.taps();
    let mut y = Vec::with_capacity(n * cout);
    for _ in 0..n {
        y.extend_from_slice(bias);
    }
    let wstride = (k, cin * k);
    let center = shape.center();
    gemm(n, cin, cout, x, (cin, 1), &weight[center..], wstride, 1.0, &mut y, (cout, 1));
    if let Some(table) = table.filter(|_| k > 1) {
        let mut g = Vec::new();
        let mut z = Vec::new();
        for tap in (0..k).filter(|&t| t != center) {
            let outs = table.outputs(tap);
            if outs.is_empty() {
                continue;
            }
            let p = outs.len();
            gather(x, cin, table.inputs(tap), &mut g);
            z.clear();
            z.resize(p * cout, 0.0);
            gemm(p, cin, cout, &g, (cin, 1), &weight[tap..], wstride, 0.0, &mut z, (cout, 1));
            scatter_add(&mut y, cout, outs, &z);
        }
    }
    Ok(y)
}

/// Gradients of [`conv_forward`]. Accumulates into `dw` and `db`; returns the
/// input gradient when `want_dx` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    x: &[f64],
    weight: &[f64],
    shape: ConvShape,
    table: Option<&NeighborTable>,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let ConvShape { cin, cout, .. } = shape;
    let n = x.len() / cin.max(1);
    assert_eq!(dy.len(), n * cout);
    assert_eq!(dw.len(), shape.weight_len());
    let k = shape.taps();
    let wstride = (k, cin * k);
    let wt_stride = (cin * k, k);
    for row in dy.chunks_exact(cout) {
        for (b, g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    let center = shape.center();
    gemm(cin, n, cout, x, (1, cin), dy, (cout, 1), 1.0, &mut dw[center..], wstride);
    let mut dx = want_dx.then(|| vec![0.0; n * cin]);
    if let Some(dx) = dx.as_mut() {
        gemm(n, cout, cin, dy, (cout, 1), &weight[center..], wt_stride, 1.0, dx, (cin, 1));
    }
    if let Some(table) = table.filter(|_| k > 1) {
        let mut g = Vec::new();
        let mut dz = Vec::new();
        let mut dg = Vec::new();
        for tap in (0..k).filter(|&t| t != center) {
            let outs = table.outputs(tap);
            if outs.is_empty() {
                continue;
            }
            let p = outs.len();
            let ins = table.inputs(tap);
            gather(x, cin, ins, &mut g);
            gather(dy, cout, outs, &mut dz);
            gemm(cin, p, cout, &g, (1, cin), &dz, (cout, 1), 1.0, &mut dw[tap..], wstride);
            if let Some(dx) = dx.as_mut() {
                dg.clear();
                dg.resize(p * cin, 0.0);
                gemm(p, cout, cin, &dz, (cout, 1), &weight[tap..], wt_stride, 0.0, &mut dg, (cin, 1));
                scatter_add(dx, cin, ins, &dg);
            }
        }
    }
    dx
}
