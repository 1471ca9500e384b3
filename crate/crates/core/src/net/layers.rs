//! Elementwise pieces of the networks: time embedding, feature-wise
//! modulation, SiLU and dropout.

use rand::Rng;

/// Width of the sinusoidal time embedding.
pub const EMBED_DIM: usize = 64;

/// `[sin(t·f_k), cos(t·f_k)]` with `f_k = 10000^(-k / (D/2))`.
pub fn time_embedding(t: usize) -> [f64; EMBED_DIM] {
    let half = EMBED_DIM / 2;
    let mut e = [0.0; EMBED_DIM];
    for k in 0..half {
        let f = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        let a = t as f64 * f;
        e[k] = a.sin();
        e[half + k] = a.cos();
    }
    e
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Multiplies `dy` in place by SiLU's derivative at `x`.
pub fn silu_backward(x: &[f64], dy: &mut [f64]) {
    for (g, &v) in dy.iter_mut().zip(x) {
        let s = sigmoid(v);
        *g *= s * (1.0 + v * (1.0 - s));
    }
}

/// Inverted dropout mask: `0` or `1 / (1 − p)` per element.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Dense `out = W·e + b` with `W` stored `(out, in)`.
pub fn linear(w: &[f64], b: &[f64], e: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, &bias)| bias + w[o * e.len()..(o + 1) * e.len()].iter().zip(e).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// `h·(1 + scale) + shift` per channel; `film` holds scale then shift.
pub fn modulate(h: &[f64], film: &[f64], channels: usize) -> Vec<f64> {
    let (scale, shift) = film.split_at(channels);
    h.chunks_exact(channels)
        .flat_map(|row| (0..channels).map(move |c| row[c] * (1.0 + scale[c]) + shift[c]))
        .collect()
}

/// Backward of [`modulate`]: returns `dh` and the gradient w.r.t. `film`.
pub fn modulate_backward(h: &[f64], film: &[f64], dm: &[f64], channels: usize) -> (Vec<f64>, Vec<f64>) {
    let scale = &film[..channels];
    let mut dfilm = vec![0.0; 2 * channels];
    let mut dh = Vec::with_capacity(h.len());
    for (row, drow) in h.chunks_exact(channels).zip(dm.chunks_exact(channels)) {
        for c in 0..channels {
            dh.push(drow[c] * (1.0 + scale[c]));
            dfilm[c] += drow[c] * row[c];
            dfilm[channels + c] += drow[c];
        }
    }
    (dh, dfilm)
}
