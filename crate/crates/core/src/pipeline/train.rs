//! Per-level training: the upsampler first (levels above the coarsest), then
//! the denoiser against the γ-blend of ground truth and the frozen upsampler
//! output.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::RunConfig;
use super::streams::{rng_from_state, rng_state, stream_rng, Stream};
use crate::diffuse::{mix_rows, normal_rows, ScheduleTable};
use crate::error::{Error, Result};
use crate::exemplar::Pyramid;
use crate::grid::{crop, flood, subdivide, SparseGrid, VoxelBox};
use crate::net::{
    mse, Adam, Checkpoint, Denoiser, DenoiserConfig, GridContext, ParamLayout, Upsampler, UpsamplerConfig,
};

/// Draws allowed per crop before giving up on finding an occupied one.
const MAX_CROP_DRAWS: usize = 10_000;

/// Full-grid loss on a fixed set of timesteps and noise, before and after a
/// training phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Probe {
    pub initial: Option<f64>,
    pub last: Option<f64>,
}

impl Probe {
    /// `last / initial` once both are known.
    pub fn ratio(&self) -> Option<f64> {
        Some(self.last? / self.initial?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingLog {
    pub level: u32,
    pub seed: u64,
    /// Per-iteration crop losses.
    pub upsampler_losses: Vec<f64>,
    pub denoiser_losses: Vec<f64>,
    pub upsampler_probe: Probe,
    pub denoiser_probe: Probe,
}

/// Trained networks for one level.
#[derive(Debug, Clone)]
pub struct LevelModel {
    pub level: u32,
    pub denoiser: Denoiser,
    pub upsampler: Option<Upsampler>,
}

impl LevelModel {
    /// Reads the networks out of a training checkpoint, ignoring optimizer state.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let level = ck.u64("meta.level")? as u32;
        let denoiser = read_denoiser(ck)?;
        let upsampler = if ck.get("upsampler.config").is_some() {
            Some(read_upsampler(ck)?)
        } else {
            None
        };
        Ok(Self {
            level,
            denoiser,
            upsampler,
        })
    }
}

/// Resumable training state for one level. All randomness comes from the
/// level's own stream, so levels can train in any order or concurrently.
pub struct LevelTrainer {
    level: u32,
    config: RunConfig,
    schedule: ScheduleTable,
    /// Subdivided coarser ground truth: the upsampler input and the training topology.
    seed_grid: Option<SparseGrid>,
    /// Ground truth flooded onto the training topology.
    target: SparseGrid,
    upsampler: Option<(Upsampler, Adam)>,
    denoiser: Denoiser,
    denoiser_adam: Adam,
    /// Upsampler output on the full training topology, fixed once the
    /// upsampler phase ends.
    frozen: Option<SparseGrid>,
    rng: ChaCha8Rng,
    log: TrainingLog,
}

impl LevelTrainer {
    pub fn new(pyramid: &Pyramid, level: u32, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let max = pyramid.num_levels();
        if config.levels != max {
            return Err(Error::Config(format!(
                "config has {} levels but the pyramid has {max}",
                config.levels
            )));
        }
        if level == 0 {
            return Err(Error::Config("levels are numbered from 1".into()));
        }
        if level > max {
            return Err(Error::LevelOverflow { level, max });
        }
        let gt = pyramid.level(level);
        let (seed_grid, target) = if level == 1 {
            (None, flood(&SparseGrid::dense(1, *gt.frame()), gt)?)
        } else {
            let seed = subdivide(pyramid.level(level - 1), max)?;
            let target = flood(&seed, gt)?;
            (Some(seed), target)
        };
        let mut rng = stream_rng(config.seed, Stream::Train, level);
        let upsampler = (level > 1).then(|| {
            let u = Upsampler::new(
                UpsamplerConfig {
                    channels: config.upsampler_channels,
                    dropout: config.upsampler_dropout,
                },
                &mut rng,
            );
            let adam = Adam::new(u.param_count(), config.upsampler_lr);
            (u, adam)
        });
        let denoiser = Denoiser::new(
            DenoiserConfig {
                channels: config.denoiser_channels,
                level,
                dropout: config.denoiser_dropout,
            },
            &mut rng,
        );
        let denoiser_adam = Adam::new(denoiser.param_count(), config.denoiser_lr);
        Ok(Self {
            level,
            config: config.clone(),
            schedule: config.schedule()?,
            seed_grid,
            target,
            upsampler,
            denoiser,
            denoiser_adam,
            frozen: None,
            rng,
            log: TrainingLog {
                level,
                seed: config.seed,
                ..TrainingLog::default()
            },
        })
    }

    /// Restores a trainer saved by [`LevelTrainer::checkpoint`]. Continuing
    /// from here matches an uninterrupted run bit for bit.
    pub fn resume(pyramid: &Pyramid, level: u32, config: &RunConfig, ck: &Checkpoint) -> Result<Self> {
        let mut tr = Self::new(pyramid, level, config)?;
        let saved_level = ck.u64("meta.level")? as u32;
        if saved_level != level {
            return Err(Error::Config(format!("checkpoint is for level {saved_level}, not {level}")));
        }
        tr.denoiser = read_denoiser(ck)?;
        if tr.denoiser.config().channels != config.denoiser_channels {
            return Err(Error::Config("checkpoint denoiser width differs from the config".into()));
        }
        tr.denoiser_adam = read_adam(ck, "denoiser", tr.denoiser.layout())?;
        if let Some(slot) = tr.upsampler.as_mut() {
            let u = read_upsampler(ck)?;
            if u.config().channels != config.upsampler_channels {
                return Err(Error::Config("checkpoint upsampler width differs from the config".into()));
            }
            let adam = read_adam(ck, "upsampler", u.layout())?;
            *slot = (u, adam);
        }
        tr.rng = rng_from_state(&ck.u64s("rng")?)?;
        tr.log.seed = ck.u64("meta.seed")?;
        tr.log.upsampler_losses = floats(&ck.u64s("log.upsampler_losses")?);
        tr.log.denoiser_losses = floats(&ck.u64s("log.denoiser_losses")?);
        tr.log.upsampler_probe = read_probe(ck, "log.upsampler_probe")?;
        tr.log.denoiser_probe = read_probe(ck, "log.denoiser_probe")?;
        Ok(tr)
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn denoiser(&self) -> &Denoiser {
        &self.denoiser
    }

    pub fn upsampler(&self) -> Option<&Upsampler> {
        self.upsampler.as_ref().map(|(u, _)| u)
    }

    /// Ground truth on the training topology.
    pub fn target(&self) -> &SparseGrid {
        &self.target
    }

    /// Iterations completed across both phases.
    pub fn iterations_done(&self) -> u64 {
        (self.log.upsampler_losses.len() + self.log.denoiser_losses.len()) as u64
    }

    pub fn total_iterations(&self) -> u64 {
        self.config.upsampler_budget(self.level) + self.config.denoiser_iterations(self.level)
    }

    pub fn is_done(&self) -> bool {
        self.iterations_done() >= self.total_iterations()
    }

    /// Runs one iteration of whichever phase is current and returns its loss,
    /// or `None` when the budget is spent.
    pub fn step(&mut self) -> Result<Option<f64>> {
        let up_budget = self.config.upsampler_budget(self.level) as usize;
        if self.log.upsampler_losses.len() < up_budget {
            if self.log.upsampler_probe.initial.is_none() {
                self.log.upsampler_probe.initial = Some(self.upsampler_probe()?);
            }
            let loss = self.upsampler_step()?;
            self.log.upsampler_losses.push(loss);
            if self.log.upsampler_losses.len() == up_budget {
                self.log.upsampler_probe.last = Some(self.upsampler_probe()?);
            }
            return Ok(Some(loss));
        }
        let budget = self.config.denoiser_iterations(self.level) as usize;
        if self.log.denoiser_losses.len() < budget {
            if self.log.denoiser_probe.initial.is_none() {
                self.log.denoiser_probe.initial = Some(self.denoiser_probe()?);
            }
            let loss = self.denoiser_step()?;
            self.log.denoiser_losses.push(loss);
            if self.log.denoiser_losses.len() == budget {
                self.log.denoiser_probe.last = Some(self.denoiser_probe()?);
            }
            return Ok(Some(loss));
        }
        Ok(None)
    }

    /// Runs at most `max_iterations` iterations; returns how many ran.
    pub fn run(&mut self, max_iterations: u64) -> Result<u64> {
        let mut n = 0;
        while n < max_iterations && self.step()?.is_some() {
            n += 1;
        }
        Ok(n)
    }

    pub fn finish(self) -> (LevelModel, TrainingLog) {
        let model = LevelModel {
            level: self.level,
            denoiser: self.denoiser,
            upsampler: self.upsampler.map(|(u, _)| u),
        };
        (model, self.log)
    }

    fn upsampler_step(&mut self) -> Result<f64> {
        let seed_grid = self.seed_grid.as_ref().expect("upsampler phase has a seed grid");
        let bx = draw_box(&mut self.rng, self.config.crop_at(self.level), self.level, seed_grid)?;
        let seed = crop(seed_grid, &bx)?;
        let target = crop(&self.target, &bx)?;
        let ctx = GridContext::new(&seed);
        let (u, adam) = self.upsampler.as_mut().expect("upsampler present above level 1");
        let (pred, cache) = u.forward_rows(seed.features(), &ctx, Some(&mut self.rng))?;
        let (loss, grad) = mse(&pred, target.features());
        finite_loss(self.level, self.log.upsampler_losses.len(), loss)?;
        let (grads, _) = u.backward(&cache, &ctx, &grad);
        let i = self.log.upsampler_losses.len() as u64;
        adam.lr = self.config.lr_at(self.config.upsampler_lr, i, self.config.upsampler_budget(self.level));
        u.apply(adam, &grads)?;
        Ok(loss)
    }

    fn freeze_upsampler(&mut self) -> Result<()> {
        if self.frozen.is_some() {
            return Ok(());
        }
        if let (Some(seed), Some((u, _))) = (&self.seed_grid, &self.upsampler) {
            let rows = u.predict_rows(seed.features(), &GridContext::new(seed))?;
            self.frozen = Some(seed.with_features(rows)?);
        }
        Ok(())
    }

    fn denoiser_step(&mut self) -> Result<f64> {
        self.freeze_upsampler()?;
        let bx = draw_box(&mut self.rng, self.config.crop_at(self.level), self.level, &self.target)?;
        let target = crop(&self.target, &bx)?;
        let up = self.frozen.as_ref().map(|f| crop(f, &bx)).transpose()?;
        let t = self.rng.gen_range(1..=self.schedule.steps());
        let noise = normal_rows(target.len(), &mut self.rng);
        let xt = mix_rows(target.features(), up.as_ref().map(|u| u.features()), t, &noise, &self.schedule);
        let ctx = GridContext::new(&target);
        let (pred, cache) = self.denoiser.forward(&xt, t, self.schedule.alpha_bar(t).sqrt(), &ctx, Some(&mut self.rng))?;
        let (loss, grad) = mse(&pred, target.features());
        finite_loss(self.level, self.log.denoiser_losses.len(), loss)?;
        let (grads, _) = self.denoiser.backward(&cache, &ctx, &grad);
        let i = self.log.denoiser_losses.len() as u64;
        self.denoiser_adam.lr = self.config.lr_at(self.config.denoiser_lr, i, self.config.denoiser_iterations(self.level));
        self.denoiser.apply(&mut self.denoiser_adam, &grads)?;
        Ok(loss)
    }

    fn upsampler_probe(&self) -> Result<f64> {
        let (Some(seed), Some((u, _))) = (&self.seed_grid, &self.upsampler) else {
            return Err(Error::LevelUnderflow(self.level));
        };
        let pred = u.predict_rows(seed.features(), &GridContext::new(seed))?;
        Ok(mse(&pred, self.target.features()).0)
    }

    /// Mean full-grid denoising loss over evenly spread timesteps with noise
    /// from the level's probe stream, so the value is comparable across
    /// checkpoints.
    pub fn denoiser_probe(&mut self) -> Result<f64> {
        self.freeze_upsampler()?;
        let mut rng = stream_rng(self.config.seed, Stream::Probe, self.level);
        let ctx = GridContext::new(&self.target);
        let k = self.config.probe_steps;
        let steps = self.schedule.steps();
        let mut total = 0.0;
        for i in 0..k {
            let t = ((2 * i + 1) * steps / (2 * k)).max(1);
            let noise = normal_rows(self.target.len(), &mut rng);
            let up = self.frozen.as_ref().map(|f| f.features());
            let xt = mix_rows(self.target.features(), up, t, &noise, &self.schedule);
            let pred = self.denoiser.predict(&xt, t, self.schedule.alpha_bar(t).sqrt(), &ctx)?;
            total += mse(&pred, self.target.features()).0;
        }
        Ok(total / k as f64)
    }

    /// Networks, optimizer moments, RNG position and log.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.put_u64("meta.level", &[u64::from(self.level)]);
        ck.put_u64("meta.seed", &[self.log.seed]);
        ck.put_u64("rng", &rng_state(&self.rng));
        write_denoiser(&mut ck, &self.denoiser);
        write_adam(&mut ck, "denoiser", self.denoiser.layout(), &self.denoiser_adam);
        if let Some((u, adam)) = &self.upsampler {
            write_upsampler(&mut ck, u);
            write_adam(&mut ck, "upsampler", u.layout(), adam);
        }
        ck.put_u64("log.upsampler_losses", &bits(&self.log.upsampler_losses));
        ck.put_u64("log.denoiser_losses", &bits(&self.log.denoiser_losses));
        write_probe(&mut ck, "log.upsampler_probe", &self.log.upsampler_probe);
        write_probe(&mut ck, "log.denoiser_probe", &self.log.denoiser_probe);
        ck
    }
}

/// Trains one level to the end of its budget.
pub fn train_level(pyramid: &Pyramid, level: u32, config: &RunConfig) -> Result<(LevelModel, TrainingLog)> {
    let mut tr = LevelTrainer::new(pyramid, level, config)?;
    while tr.step()?.is_some() {}
    Ok(tr.finish())
}

/// Trains the given levels on separate threads. Results come back in the
/// order of `levels`.
pub fn train_levels_concurrently(
    pyramid: &Pyramid,
    levels: &[u32],
    config: &RunConfig,
) -> Vec<Result<(LevelModel, TrainingLog)>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = levels
            .iter()
            .map(|&l| s.spawn(move || train_level(pyramid, l, config)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    })
}

/// A random crop of edge `crop` (or the whole axis) holding at least one
/// active voxel. Above the coarsest level crops start on even coordinates so
/// siblings from one subdivision stay together.
fn draw_box(rng: &mut ChaCha8Rng, crop: u32, level: u32, grid: &SparseGrid) -> Result<VoxelBox> {
    let res = grid.resolution();
    let ext = res.map(|r| crop.min(r));
    let align = if level > 1 { !1 } else { !0 };
    for _ in 0..MAX_CROP_DRAWS {
        let min = [0, 1, 2].map(|a| (rng.gen_range(0..=res[a] - ext[a]) & align) as i32);
        let max = [0, 1, 2].map(|a| min[a] + ext[a] as i32);
        let bx = VoxelBox::new(min, max)?;
        if grid.coords().iter().any(|c| bx.contains(c)) {
            return Ok(bx);
        }
    }
    Err(Error::EmptyInput("training crop"))
}

fn finite_loss(level: u32, iteration: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { level, iteration, loss })
    }
}

fn bits(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

fn floats(words: &[u64]) -> Vec<f64> {
    words.iter().map(|&w| f64::from_bits(w)).collect()
}

fn write_probe(ck: &mut Checkpoint, name: &str, p: &Probe) {
    let words: Vec<u64> = [p.initial, p.last].iter().flatten().map(|v| v.to_bits()).collect();
    // Presence flags first so a missing initial value is unambiguous.
    let mut all = vec![u64::from(p.initial.is_some()), u64::from(p.last.is_some())];
    all.extend(words);
    ck.put_u64(name, &all);
}

fn read_probe(ck: &Checkpoint, name: &str) -> Result<Probe> {
    let w = ck.u64s(name)?;
    let bad = || Error::format("svckpt", format!("malformed `{name}`"));
    let (flags, mut rest) = (w.get(..2).ok_or_else(bad)?, w[2..].iter());
    let mut next = |present: u64| -> Result<Option<f64>> {
        if present == 0 {
            Ok(None)
        } else {
            rest.next().map(|&v| Some(f64::from_bits(v))).ok_or_else(bad)
        }
    };
    Ok(Probe {
        initial: next(flags[0])?,
        last: next(flags[1])?,
    })
}

fn write_tensors(ck: &mut Checkpoint, prefix: &str, layout: &ParamLayout, values: &[f64]) {
    for spec in layout.specs() {
        ck.put_f64(format!("{prefix}.{}", spec.name), &spec.shape, &values[spec.range()]);
    }
}

fn read_tensors(ck: &Checkpoint, prefix: &str, layout: &ParamLayout) -> Result<Vec<f64>> {
    let mut out = vec![0.0; layout.len()];
    for spec in layout.specs() {
        let name = format!("{prefix}.{}", spec.name);
        let v = ck.f64s(&name)?;
        if v.len() != spec.len() {
            return Err(Error::format("svckpt", format!("`{name}` has {} values, expected {}", v.len(), spec.len())));
        }
        out[spec.range()].copy_from_slice(&v);
    }
    Ok(out)
}

fn write_denoiser(ck: &mut Checkpoint, d: &Denoiser) {
    let c = d.config();
    ck.put_u64(
        "denoiser.config",
        &[c.channels as u64, u64::from(c.level), c.dropout.to_bits()],
    );
    write_tensors(ck, "denoiser.param", d.layout(), d.params());
}

fn read_denoiser(ck: &Checkpoint) -> Result<Denoiser> {
    let w = ck.u64s("denoiser.config")?;
    if w.len() != 3 {
        return Err(Error::format("svckpt", "malformed `denoiser.config`"));
    }
    let mut d = Denoiser::zeroed(DenoiserConfig {
        channels: w[0] as usize,
        level: w[1] as u32,
        dropout: f64::from_bits(w[2]),
    });
    let params = read_tensors(ck, "denoiser.param", d.layout())?;
    d.params_mut().copy_from_slice(&params);
    Ok(d)
}

fn write_upsampler(ck: &mut Checkpoint, u: &Upsampler) {
    let c = u.config();
    ck.put_u64("upsampler.config", &[c.channels as u64, c.dropout.to_bits()]);
    write_tensors(ck, "upsampler.param", u.layout(), u.params());
}

fn read_upsampler(ck: &Checkpoint) -> Result<Upsampler> {
    let w = ck.u64s("upsampler.config")?;
    if w.len() != 2 {
        return Err(Error::format("svckpt", "malformed `upsampler.config`"));
    }
    let mut u = Upsampler::zeroed(UpsamplerConfig {
        channels: w[0] as usize,
        dropout: f64::from_bits(w[1]),
    });
    let params = read_tensors(ck, "upsampler.param", u.layout())?;
    u.params_mut().copy_from_slice(&params);
    Ok(u)
}

fn write_adam(ck: &mut Checkpoint, prefix: &str, layout: &ParamLayout, adam: &Adam) {
    ck.put_u64(format!("{prefix}.adam"), &[adam.step, adam.lr.to_bits()]);
    write_tensors(ck, &format!("{prefix}.adam_m"), layout, &adam.m);
    write_tensors(ck, &format!("{prefix}.adam_v"), layout, &adam.v);
}

fn read_adam(ck: &Checkpoint, prefix: &str, layout: &ParamLayout) -> Result<Adam> {
    let w = ck.u64s(&format!("{prefix}.adam"))?;
    if w.len() != 2 {
        return Err(Error::format("svckpt", format!("malformed `{prefix}.adam`")));
    }
    Ok(Adam {
        lr: f64::from_bits(w[1]),
        step: w[0],
        m: read_tensors(ck, &format!("{prefix}.adam_m"), layout)?,
        v: read_tensors(ck, &format!("{prefix}.adam_v"), layout)?,
    })
}
