//! Learned upsampler: subdivision seeds refined by a residual 3³ conv stack.

use rand::RngCore;

use super::adam::Adam;
use super::conv::ConvShape;
use super::denoiser::{ConvSlot, GridContext};
use super::layers::{dropout_mask, silu, silu_backward};
use super::layout::{round_to_f32, ParamLayout};
use crate::error::{Error, Result};
use crate::grid::{subdivide, FeatureRow, SparseGrid, CHANNELS};

pub const UPSAMPLER_LAYERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UpsamplerConfig {
    pub channels: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct UpsamplerCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

/// Four 3³ convs (10 → C → C → C → 10) with SiLU and dropout between them,
/// added to the subdivided seed features. The last conv starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Upsampler {
    config: UpsamplerConfig,
    layout: ParamLayout,
    params: Vec<f64>,
    convs: Vec<ConvSlot>,
}

impl Upsampler {
    pub fn zeroed(config: UpsamplerConfig) -> Self {
        let c = config.channels;
        let widths = [CHANNELS, c, c, c, CHANNELS];
        let mut layout = ParamLayout::default();
        let convs = (0..UPSAMPLER_LAYERS)
            .map(|i| {
                let shape = ConvShape {
                    cin: widths[i],
                    cout: widths[i + 1],
                    extent: 3,
                };
                ConvSlot::new(&mut layout, &format!("up{i}"), shape)
            })
            .collect();
        let params = vec![0.0; layout.len()];
        Self {
            config,
            layout,
            params,
            convs,
        }
    }

    pub fn new<R: RngCore + ?Sized>(config: UpsamplerConfig, rng: &mut R) -> Self {
        let mut u = Self::zeroed(config);
        for conv in &u.convs[..UPSAMPLER_LAYERS - 1] {
            conv.init(&mut u.params, rng);
        }
        round_to_f32(&mut u.params);
        u
    }

    pub fn config(&self) -> &UpsamplerConfig {
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

    fn run(
        &self,
        seed: &[FeatureRow],
        ctx: &GridContext,
        mut dropout: Option<&mut dyn RngCore>,
        keep: bool,
    ) -> Result<(Vec<FeatureRow>, Option<UpsamplerCache>)> {
        if seed.len() != ctx.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} seed rows for a {}-voxel context",
                seed.len(),
                ctx.len()
            )));
        }
        let p = &self.params;
        let mut cache = keep.then(|| UpsamplerCache {
            inputs: Vec::new(),
            pre: Vec::new(),
            masks: Vec::new(),
        });
        let mut h = seed.as_flattened().to_vec();
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            let a = conv.forward(p, &h, ctx)?;
            let input = std::mem::take(&mut h);
            if i == last {
                if let Some(cache) = cache.as_mut() {
                    cache.inputs.push(input);
                }
                h = a;
                break;
            }
            let mut out = silu(&a);
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
                cache.inputs.push(input);
                cache.pre.push(a);
                cache.masks.push(mask);
            }
            h = out;
        }
        let y = seed
            .iter()
            .zip(h.chunks_exact(CHANNELS))
            .map(|(s, d)| std::array::from_fn(|ch| s[ch] + d[ch]))
            .collect();
        Ok((y, cache))
    }

    /// Refines seed features on their own (already subdivided) topology.
    pub fn forward_rows(
        &self,
        seed: &[FeatureRow],
        ctx: &GridContext,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<(Vec<FeatureRow>, UpsamplerCache)> {
        let (y, cache) = self.run(seed, ctx, dropout, true)?;
        Ok((y, cache.expect("cache requested")))
    }

    pub fn predict_rows(&self, seed: &[FeatureRow], ctx: &GridContext) -> Result<Vec<FeatureRow>> {
        Ok(self.run(seed, ctx, None, false)?.0)
    }

    /// Subdivides `coarse` and refines it: the blurry initial guess for the
    /// next level.
    pub fn upsample(&self, coarse: &SparseGrid, max_level: u32) -> Result<SparseGrid> {
        let seed = subdivide(coarse, max_level)?;
        let ctx = GridContext::new(&seed);
        let rows = self.predict_rows(seed.features(), &ctx)?;
        seed.with_features(rows)
    }

    /// Parameter and seed gradients for upstream gradient `dy`.
    pub fn backward(&self, cache: &UpsamplerCache, ctx: &GridContext, dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let mut grads = vec![0.0; p.len()];
        let last = self.convs.len() - 1;
        let mut dh = self.convs[last]
            .backward(p, &mut grads, &cache.inputs[last], ctx, dy, true)
            .unwrap();
        for i in (0..last).rev() {
            if let Some(mask) = &cache.masks[i] {
                for (g, k) in dh.iter_mut().zip(mask) {
                    *g *= k;
                }
            }
            silu_backward(&cache.pre[i], &mut dh);
            dh = self.convs[i]
                .backward(p, &mut grads, &cache.inputs[i], ctx, &dh, true)
                .unwrap();
        }
        let dseed = dy.iter().zip(&dh).map(|(a, b)| a + b).collect();
        (grads, dseed)
    }
}
