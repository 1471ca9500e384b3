//! Sparse convolutional networks with hand-written reverse-mode gradients.
//!
//! Everything runs in f64; parameters and optimizer moments are kept
//! f32-representable so that `.svckpt` checkpoints resume bit-exactly.

mod adam;
mod checkpoint;
mod conv;
mod denoiser;
mod layers;
mod layout;
mod upsampler;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, Entry, TensorData, SVCKPT_MAGIC};
pub use conv::{conv_backward, conv_forward, ConvShape};
pub use denoiser::{layer_plan, Denoiser, DenoiserCache, DenoiserConfig, GridContext, DENOISER_LAYERS};
pub use layers::{time_embedding, EMBED_DIM};
pub use layout::{round_to_f32, ParamLayout, ParamSpec};
pub use upsampler::{Upsampler, UpsamplerCache, UpsamplerConfig, UPSAMPLER_LAYERS};

use crate::grid::FeatureRow;

/// Mean squared error over all rows and channels, with its gradient.
pub fn mse(pred: &[FeatureRow], target: &[FeatureRow]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len());
    let n = (pred.len() * crate::grid::CHANNELS).max(1) as f64;
    let mut loss = 0.0;
    let grad = pred
        .as_flattened()
        .iter()
        .zip(target.as_flattened())
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grad)
}
