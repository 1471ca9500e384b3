//! Run configuration, stored as a flat TOML key/value file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffuse::{ScheduleTable, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_LATER_START};
use crate::error::{Error, Result};
use crate::exemplar::ExtractConfig;
use crate::grid::PointPooling;

/// Everything needed to extract, train and sample. Missing keys take the
/// defaults below; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub levels: u32,
    /// Level-1 voxels per axis.
    pub base_resolution: u32,
    pub sample_resolution: u32,
    pub pooling: PointPooling,
    /// Diffusion steps `T`.
    pub steps: usize,
    /// Start step for levels above the coarsest.
    pub later_start: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub coarsest_iterations: u64,
    pub iterations: u64,
    pub upsampler_iterations: u64,
    /// Crop edge in voxels above the coarsest level; a crop at least as large
    /// as the grid uses the whole grid.
    pub crop: u32,
    /// Crop edge at the coarsest level.
    pub coarsest_crop: u32,
    pub denoiser_channels: usize,
    pub upsampler_channels: usize,
    pub denoiser_lr: f64,
    pub upsampler_lr: f64,
    pub denoiser_dropout: f64,
    pub upsampler_dropout: f64,
    /// Learning rate reached at the end of a phase, as a fraction of the
    /// initial rate, following a cosine decay. 1 keeps the rate constant.
    pub final_lr_fraction: f64,
    pub ddim_stride: usize,
    pub seed: u64,
    /// Timesteps in the fixed full-grid loss probe recorded before and after training.
    pub probe_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_resolution: 16,
            sample_resolution: 256,
            pooling: PointPooling::Qem,
            steps: 1000,
            later_start: DEFAULT_LATER_START,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            coarsest_iterations: 20_000,
            iterations: 40_000,
            upsampler_iterations: 10_000,
            crop: 16,
            coarsest_crop: 16,
            denoiser_channels: 128,
            upsampler_channels: 64,
            denoiser_lr: 1e-4,
            upsampler_lr: 5e-4,
            denoiser_dropout: 0.01,
            upsampler_dropout: 0.05,
            final_lr_fraction: 1.0,
            ddim_stride: 10,
            seed: 0,
            probe_steps: 16,
        }
    }
}

impl RunConfig {
    /// Small networks and short budgets that train a 16/32/64 pyramid on one
    /// CPU core in well under half an hour.
    pub fn toy() -> Self {
        Self {
            coarsest_iterations: 5_000,
            iterations: 10_000,
            upsampler_iterations: 2_500,
            crop: 8,
            denoiser_channels: 32,
            upsampler_channels: 16,
            denoiser_lr: 1e-3,
            upsampler_lr: 2e-3,
            final_lr_fraction: 0.05,
            ddim_stride: 50,
            probe_steps: 8,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be positive")));
        if self.levels == 0 {
            return bad("levels");
        }
        if self.steps < 2 {
            return Err(Error::Config("steps must be at least 2".into()));
        }
        if self.later_start == 0 {
            return bad("later_start");
        }
        if self.crop == 0 || self.coarsest_crop == 0 {
            return bad("crop");
        }
        if self.denoiser_channels == 0 || self.upsampler_channels == 0 {
            return bad("channel counts");
        }
        if !(self.denoiser_lr > 0.0 && self.upsampler_lr > 0.0) {
            return bad("learning rates");
        }
        if self.ddim_stride == 0 || self.probe_steps == 0 {
            return bad("ddim_stride and probe_steps");
        }
        for p in [self.denoiser_dropout, self.upsampler_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout {p} outside [0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config("final_lr_fraction must lie in [0, 1]".into()));
        }
        if !(0.0 < self.beta_start && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return Err(Error::Config("need 0 < beta_start <= beta_end < 1".into()));
        }
        self.extract_config().refinements()?;
        Ok(())
    }

    pub fn extract_config(&self) -> ExtractConfig {
        ExtractConfig {
            base_resolution: self.base_resolution,
            levels: self.levels,
            sample_resolution: self.sample_resolution,
            pooling: self.pooling,
        }
    }

    pub fn schedule(&self) -> Result<ScheduleTable> {
        ScheduleTable::linear(self.steps, self.levels, self.beta_start, self.beta_end, self.later_start)
    }

    /// Training crop edge at `level`.
    pub fn crop_at(&self, level: u32) -> u32 {
        if level == 1 {
            self.coarsest_crop
        } else {
            self.crop
        }
    }

    /// Denoiser iteration budget at `level`.
    pub fn denoiser_iterations(&self, level: u32) -> u64 {
        if level == 1 {
            self.coarsest_iterations
        } else {
            self.iterations
        }
    }

    /// Learning rate for iteration `i` of a phase with `budget` iterations.
    pub fn lr_at(&self, base: f64, i: u64, budget: u64) -> f64 {
        let f = self.final_lr_fraction;
        let progress = i as f64 / budget.max(1) as f64;
        base * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }

    /// Upsampler iteration budget at `level` (none at the coarsest level).
    pub fn upsampler_budget(&self, level: u32) -> u64 {
        if level == 1 {
            0
        } else {
            self.upsampler_iterations
        }
    }
}
