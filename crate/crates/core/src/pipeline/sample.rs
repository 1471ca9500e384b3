//! Coarse-to-fine generation: dense noise at the coarsest level, then
//! upsample, renoise and denoise at every finer level, pruning after each.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::streams::{stream_rng, Stream};
use super::train::LevelModel;
use crate::diffuse::{ddim_rows, ddim_timesteps, ddpm_rows, normal_rows, ScheduleTable};
use crate::error::{Error, Result};
use crate::exemplar::Pyramid;
use crate::grid::{clamp_row, prune, FeatureRow, GridFrame, SparseGrid, CHANNELS};
use crate::net::GridContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Ddpm,
    #[default]
    Ddim,
}

impl std::str::FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ddpm" => Ok(Sampler::Ddpm),
            "ddim" => Ok(Sampler::Ddim),
            _ => Err(Error::Config(format!("unknown sampler `{s}`"))),
        }
    }
}

/// One generated variation: a pruned grid per level plus what is needed to
/// replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seed: u64,
    pub sampler: Sampler,
    /// Level-1 resolution the sample started from.
    pub resolution: [u32; 3],
    pub levels: Vec<SparseGrid>,
    /// Active voxels per level before pruning.
    pub pre_prune_counts: Vec<usize>,
}

/// Trained models plus the schedule and coarsest frame needed to sample.
#[derive(Debug, Clone)]
pub struct Generator {
    models: Vec<LevelModel>,
    schedule: ScheduleTable,
    ddim_stride: usize,
    /// Coarsest-level frame of the exemplar; resizing keeps its voxel size.
    base_frame: GridFrame,
}

impl Generator {
    /// `models` must hold one model per level, in level order.
    pub fn new(models: Vec<LevelModel>, config: &RunConfig, pyramid: &Pyramid) -> Result<Self> {
        Self::with_frame(models, config, *pyramid.level(1).frame())
    }

    pub fn with_frame(models: Vec<LevelModel>, config: &RunConfig, base_frame: GridFrame) -> Result<Self> {
        if models.is_empty() || models.len() != config.levels as usize {
            return Err(Error::Config(format!(
                "need {} level models, got {}",
                config.levels,
                models.len()
            )));
        }
        for (i, m) in models.iter().enumerate() {
            let level = i as u32 + 1;
            if m.level != level || m.denoiser.config().level != level || m.upsampler.is_some() != (level > 1) {
                return Err(Error::Config(format!("model {i} does not match level {level}")));
            }
        }
        Ok(Self {
            models,
            schedule: config.schedule()?,
            ddim_stride: config.ddim_stride,
            base_frame,
        })
    }

    pub fn num_levels(&self) -> u32 {
        self.models.len() as u32
    }

    pub fn schedule(&self) -> &ScheduleTable {
        &self.schedule
    }

    pub fn base_frame(&self) -> &GridFrame {
        &self.base_frame
    }

    /// Generates every level from scratch. `resolution` overrides the
    /// level-1 grid size (anisotropic resizing); the voxel size is kept.
    pub fn sample(&self, seed: u64, sampler: Sampler, resolution: Option<[u32; 3]>) -> Result<Sample> {
        let resolution = resolution.unwrap_or(self.base_frame.resolution);
        if resolution.contains(&0) {
            return Err(Error::InvalidGrid("resolution must be positive".into()));
        }
        let frame = GridFrame::centered(resolution, self.base_frame.voxel_size[0]);
        let mut rng = stream_rng(seed, Stream::Sample, 1);
        let dense = SparseGrid::dense(1, frame);
        let noise = normal_rows(dense.len(), &mut rng);
        let start = self.schedule.steps();
        let grid = self.denoise(1, dense.with_features(noise)?, start, sampler, &mut rng)?;
        let mut out = Sample {
            seed,
            sampler,
            resolution,
            levels: Vec::new(),
            pre_prune_counts: Vec::new(),
        };
        out.push_level(1, grid)?;
        self.refine(out, 2)
    }

    /// Keeps levels `1..=from_level` of `base` and regenerates the finer
    /// ones with the streams of its seed.
    pub fn resample_below(&self, base: &Sample, from_level: u32) -> Result<Sample> {
        if from_level == 0 {
            return Err(Error::Config("levels are numbered from 1".into()));
        }
        if from_level as usize > base.levels.len() || from_level > self.num_levels() {
            return Err(Error::LevelOverflow {
                level: from_level,
                max: base.levels.len().min(self.models.len()) as u32,
            });
        }
        let keep = from_level as usize;
        let out = Sample {
            seed: base.seed,
            sampler: base.sampler,
            resolution: base.levels[0].resolution(),
            levels: base.levels[..keep].to_vec(),
            pre_prune_counts: base.pre_prune_counts[..keep].to_vec(),
        };
        self.refine(out, from_level + 1)
    }

    fn refine(&self, mut out: Sample, first: u32) -> Result<Sample> {
        for level in first..=self.num_levels() {
            let model = &self.models[level as usize - 1];
            let upsampler = model.upsampler.as_ref().expect("finer levels have upsamplers");
            let coarse = out.levels.last().expect("coarser level present");
            let guess = upsampler.upsample(coarse, self.num_levels())?;
            let mut rng = stream_rng(out.seed, Stream::Sample, level);
            let start = self.schedule.level_start(level);
            let ab = self.schedule.alpha_bar(start);
            let noise = normal_rows(guess.len(), &mut rng);
            let rows = guess
                .features()
                .iter()
                .zip(&noise)
                .map(|(g, e)| std::array::from_fn(|ch| ab.sqrt() * g[ch] + (1.0 - ab).sqrt() * e[ch]))
                .collect();
            let grid = self.denoise(level, guess.with_features(rows)?, start, out.sampler, &mut rng)?;
            out.push_level(level, grid)?;
        }
        Ok(out)
    }

    /// Reverse process from `start` to 0 on a fixed topology. Clean-grid
    /// predictions are clamped to the valid feature ranges before each update.
    /// Short normals are left alone: at high noise the prediction shrinks
    /// toward the mean, and rescaling it would inject noise.
    fn denoise(
        &self,
        level: u32,
        noisy: SparseGrid,
        start: usize,
        sampler: Sampler,
        rng: &mut ChaCha8Rng,
    ) -> Result<SparseGrid> {
        let model = &self.models[level as usize - 1].denoiser;
        let ctx = GridContext::new(&noisy);
        let mut x: Vec<FeatureRow> = noisy.features().to_vec();
        let predict = |x: &[FeatureRow], t: usize| -> Result<Vec<FeatureRow>> {
            Ok(model.predict(x, t, self.schedule.alpha_bar(t).sqrt(), &ctx)?.iter().map(|r| clamp_row(r, false)).collect())
        };
        match sampler {
            Sampler::Ddim => {
                for (t, prev) in ddim_timesteps(start, self.ddim_stride) {
                    let x0 = predict(&x, t)?;
                    x = ddim_rows(&x0, &x, t, prev, &self.schedule);
                }
            }
            Sampler::Ddpm => {
                for t in (1..=start).rev() {
                    let x0 = predict(&x, t)?;
                    let noise = if t > 1 {
                        normal_rows(x.len(), rng)
                    } else {
                        vec![[0.0; CHANNELS]; x.len()]
                    };
                    x = ddpm_rows(&x0, &x, t, &noise, &self.schedule);
                }
            }
        }
        noisy.with_features(x)
    }
}

impl Sample {
    fn push_level(&mut self, level: u32, grid: SparseGrid) -> Result<()> {
        self.pre_prune_counts.push(grid.len());
        let pruned = match prune(&grid) {
            Ok(g) => g,
            Err(Error::EmptyResult) => return Err(Error::EmptySample(level)),
            Err(e) => return Err(e),
        };
        self.levels.push(pruned.finalized());
        Ok(())
    }

    pub fn level(&self, level: u32) -> &SparseGrid {
        &self.levels[level as usize - 1]
    }

    pub fn finest(&self) -> &SparseGrid {
        self.levels.last().expect("samples have at least one level")
    }
}
