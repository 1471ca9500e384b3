//! Per-level denoiser: time-modulated sparse conv stack predicting the clean grid.

use std::ops::Range;

use rand::RngCore;

use super::adam::Adam;
use super::conv::{conv_backward, conv_forward, ConvShape};
use super::layers::{
    dropout_mask, linear, modulate, modulate_backward, silu, silu_backward, time_embedding, EMBED_DIM,
};
use super::layout::{he_uniform, round_to_f32, ParamLayout};
use crate::error::{Error, Result};
use crate::grid::{gather_neighborhood, FeatureRow, NeighborTable, SparseGrid, CHANNELS};

/// Hidden conv layers in every denoiser.
pub const DENOISER_LAYERS: usize = 7;

/// Kernel extents of the hidden layers. Level 1 sees a 5³ neighbourhood,
/// finer levels 9³.
pub fn layer_plan(level: u32) -> [usize; DENOISER_LAYERS] {
    if level <= 1 {
        [3, 3, 1, 1, 1, 1, 1]
    } else {
        [3, 3, 3, 3, 1, 1, 1]
    }
}

/// Neighbour lookups for one grid topology, shared by every 3³ layer.
#[derive(Debug, Clone)]
pub struct GridContext {
    table: NeighborTable,
}

impl GridContext {
    pub fn new(grid: &SparseGrid) -> Self {
        Self {
            table: gather_neighborhood(grid, 3),
        }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub(crate) fn table_for(&self, extent: usize) -> Option<&NeighborTable> {
        (extent == 3).then_some(&self.table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub level: u32,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvSlot {
    pub shape: ConvShape,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

impl ConvSlot {
    pub fn new(layout: &mut ParamLayout, name: &str, shape: ConvShape) -> Self {
        let k = shape.extent;
        let w = layout.push(format!("{name}.weight"), vec![shape.cout, shape.cin, k, k, k]);
        let b = layout.push(format!("{name}.bias"), vec![shape.cout]);
        Self { shape, w, b }
    }

    pub fn forward(&self, params: &[f64], x: &[f64], ctx: &GridContext) -> Result<Vec<f64>> {
        conv_forward(
            x,
            &params[self.w.clone()],
            &params[self.b.clone()],
            self.shape,
            ctx.table_for(self.shape.extent),
        )
    }

    pub fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        x: &[f64],
        ctx: &GridContext,
        dy: &[f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let (dw, rest) = grads.split_at_mut(self.b.start);
        conv_backward(
            x,
            &params[self.w.clone()],
            self.shape,
            ctx.table_for(self.shape.extent),
            dy,
            &mut dw[self.w.clone()],
            &mut rest[..self.b.len()],
            want_dx,
        )
    }

    pub fn init<R: RngCore + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let fan_in = self.shape.cin * self.shape.taps();
        he_uniform(&mut params[self.w.clone()], fan_in, rng);
    }
}

#[derive(Debug, Clone, PartialEq)]
struct FilmSlot {
    w: Range<usize>,
    b: Range<usize>,
}

/// Activations saved by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct DenoiserCache {
    x: Vec<f64>,
    embedding: [f64; EMBED_DIM],
    films: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    convs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    last: Vec<f64>,
    skip: f64,
}

/// Input projection, 7 modulated conv + SiLU + dropout layers, output
/// projection, plus a residual connection from the noisy input scaled by
/// `skip`. Callers pass `skip = √ᾱ(t)`: the skip is the identity at low noise
/// and fades out where the input carries no signal, so the network never has
/// to learn to cancel pure noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    layout: ParamLayout,
    params: Vec<f64>,
    conv_in: ConvSlot,
    layers: Vec<ConvSlot>,
    films: Vec<FilmSlot>,
    conv_out: ConvSlot,
}

impl Denoiser {
    /// All parameters zero: the network is the identity map.
    pub fn zeroed(config: DenoiserConfig) -> Self {
        let c = config.channels;
        let mut layout = ParamLayout::default();
        let conv_in = ConvSlot::new(&mut layout, "in", ConvShape { cin: CHANNELS, cout: c, extent: 1 });
        let mut layers = Vec::new();
        let mut films = Vec::new();
        for (i, extent) in layer_plan(config.level).into_iter().enumerate() {
            layers.push(ConvSlot::new(&mut layout, &format!("layer{i}"), ConvShape { cin: c, cout: c, extent }));
            let w = layout.push(format!("film{i}.weight"), vec![2 * c, EMBED_DIM]);
            let b = layout.push(format!("film{i}.bias"), vec![2 * c]);
            films.push(FilmSlot { w, b });
        }
        let conv_out = ConvSlot::new(&mut layout, "out", ConvShape { cin: c, cout: CHANNELS, extent: 1 });
        let params = vec![0.0; layout.len()];
        Self {
            config,
            layout,
            params,
            conv_in,
            layers,
            films,
            conv_out,
        }
    }

    /// He-uniform conv weights and zero biases; the modulation maps and the
    /// output projection start at zero so the untrained model is the identity.
    pub fn new<R: RngCore + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Self {
        let mut d = Self::zeroed(config);
        d.conv_in.init(&mut d.params, rng);
        for l in &d.layers {
            l.init(&mut d.params, rng);
        }
        round_to_f32(&mut d.params);
        d
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// One optimizer step on this network's parameters.
    pub fn apply(&mut self, adam: &mut Adam, grads: &[f64]) -> Result<()> {
        adam.update(&self.layout, &mut self.params, grads)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Chebyshev radius of the network's receptive field.
    pub fn receptive_radius(&self) -> usize {
        self.layers.iter().map(|l| l.shape.extent / 2).sum()
    }

    fn run(
        &self,
        x: &[FeatureRow],
        t: usize,
        skip: f64,
        ctx: &GridContext,
        mut dropout: Option<&mut dyn RngCore>,
        keep: bool,
    ) -> Result<(Vec<FeatureRow>, Option<DenoiserCache>)> {
        if x.len() != ctx.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for a {}-voxel context",
                x.len(),
                ctx.len()
            )));
        }
        let c = self.config.channels;
        let p = &self.params;
        let flat = x.as_flattened();
        let embedding = time_embedding(t);
        let mut h = self.conv_in.forward(p, flat, ctx)?;
        let mut cache = keep.then(|| DenoiserCache {
            x: flat.to_vec(),
            embedding,
            films: Vec::new(),
            inputs: Vec::new(),
            convs: Vec::new(),
            pre: Vec::new(),
            masks: Vec::new(),
            last: Vec::new(),
            skip,
        });
        for (layer, film) in self.layers.iter().zip(&self.films) {
            let f = linear(&p[film.w.clone()], &p[film.b.clone()], &embedding);
            let a = layer.forward(p, &h, ctx)?;
            let m = modulate(&a, &f, c);
            let mut out = silu(&m);
            let mask = match dropout.as_deref_mut() {
                Some(rng) if self.config.dropout > 0.0 => {
                    let mask = dropout_mask(out.len(), self.config.dropout, rng);
                    for (o, k) in out.iter_mut().zip(&mask) {
                        *o *= k;
                    }
                    Some(mask)
                }
                _ => None,
            };
            if let Some(cache) = cache.as_mut() {
                cache.films.push(f);
                cache.inputs.push(std::mem::take(&mut h));
                cache.convs.push(a);
                cache.pre.push(m);
                cache.masks.push(mask);
            }
            h = out;
        }
        let out = self.conv_out.forward(p, &h, ctx)?;
        if let Some(cache) = cache.as_mut() {
            cache.last = h;
        }
        let y = x
            .iter()
            .zip(out.chunks_exact(CHANNELS))
            .map(|(xi, oi)| std::array::from_fn(|ch| skip * xi[ch] + oi[ch]))
            .collect();
        Ok((y, cache))
    }

    /// Clean-grid prediction. Dropout is applied only when an RNG is given.
    pub fn forward(
        &self,
        x: &[FeatureRow],
        t: usize,
        skip: f64,
        ctx: &GridContext,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<(Vec<FeatureRow>, DenoiserCache)> {
        let (y, cache) = self.run(x, t, skip, ctx, dropout, true)?;
        Ok((y, cache.expect("cache requested")))
    }

    /// Inference-mode prediction without saved activations.
    pub fn predict(&self, x: &[FeatureRow], t: usize, skip: f64, ctx: &GridContext) -> Result<Vec<FeatureRow>> {
        Ok(self.run(x, t, skip, ctx, None, false)?.0)
    }

    /// Parameter gradients and input gradients for upstream gradient `dy`
    /// (flattened `n × 10`).
    pub fn backward(&self, cache: &DenoiserCache, ctx: &GridContext, dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = self.config.channels;
        let p = &self.params;
        let mut grads = vec![0.0; p.len()];
        let mut dh = self
            .conv_out
            .backward(p, &mut grads, &cache.last, ctx, dy, true)
            .unwrap();
        for i in (0..self.layers.len()).rev() {
            if let Some(mask) = &cache.masks[i] {
                for (g, k) in dh.iter_mut().zip(mask) {
                    *g *= k;
                }
            }
            silu_backward(&cache.pre[i], &mut dh);
            let (da, dfilm) = modulate_backward(&cache.convs[i], &cache.films[i], &dh, c);
            let film = &self.films[i];
            for (o, g) in dfilm.iter().enumerate() {
                grads[film.b.start + o] += g;
                let row = film.w.start + o * EMBED_DIM;
                for (k, e) in cache.embedding.iter().enumerate() {
                    grads[row + k] += g * e;
                }
            }
            dh = self.layers[i]
                .backward(p, &mut grads, &cache.inputs[i], ctx, &da, true)
                .unwrap();
        }
        let dproj = self
            .conv_in
            .backward(p, &mut grads, &cache.x, ctx, &dh, true)
            .unwrap();
        let dx = dy.iter().zip(&dproj).map(|(a, b)| cache.skip * a + b).collect();
        (grads, dx)
    }
}
