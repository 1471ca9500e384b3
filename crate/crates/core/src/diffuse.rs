//! Noise schedule, the blended forward process and x₀-parameterized reverse
//! steps.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{FeatureRow, SparseGrid, CHANNELS};

pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;
/// Renoising step for every level below the coarsest.
pub const DEFAULT_LATER_START: usize = 300;

/// Precomputed `ᾱ(t)`, `γ(t)` and per-level start steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTable {
    steps: usize,
    alpha_bar: Vec<f64>,
    gamma: Vec<f64>,
    per_level_start: Vec<usize>,
}

impl ScheduleTable {
    /// Linear β from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(
        steps: usize,
        levels: u32,
        beta_start: f64,
        beta_end: f64,
        later_start: usize,
    ) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("need at least 2 diffusion steps, got {steps}")));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "beta range [{beta_start}, {beta_end}] must satisfy 0 < start <= end < 1"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for i in 0..steps {
            let beta = beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self::from_alpha_bar(alpha_bar, levels, later_start)
    }

    /// Builds a table from an explicit `ᾱ(0..=T)` sequence.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>, levels: u32, later_start: usize) -> Result<Self> {
        let steps = alpha_bar.len().saturating_sub(1);
        if steps < 1 || alpha_bar[0] != 1.0 {
            return Err(Error::Config("alpha_bar must start at 1 and have a step".into()));
        }
        if alpha_bar.windows(2).any(|w| !(w[1] < w[0] && w[1] > 0.0)) {
            return Err(Error::Config("alpha_bar must be strictly decreasing and positive".into()));
        }
        let gamma = (0..=steps).map(|t| 1.0 - t as f64 / steps as f64).collect();
        let per_level_start = (1..=levels.max(1))
            .map(|l| if l == 1 { steps } else { later_start.clamp(1, steps) })
            .collect();
        Ok(Self {
            steps,
            alpha_bar,
            gamma,
            per_level_start,
        })
    }

    /// Total number of steps `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma[t]
    }

    /// `α(t) = ᾱ(t) / ᾱ(t−1)` for `t ≥ 1`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar[t] / self.alpha_bar[t - 1]
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha(t)
    }

    /// Reverse-process start step for 1-based `level`.
    pub fn level_start(&self, level: u32) -> usize {
        let i = (level as usize - 1).min(self.per_level_start.len() - 1);
        self.per_level_start[i]
    }

    pub fn per_level_start(&self) -> &[usize] {
        &self.per_level_start
    }
}

/// Default schedule: linear β in `[1e-4, 2e-2]`, later levels start at 300.
pub fn make_schedule(steps: usize, levels: u32) -> Result<ScheduleTable> {
    ScheduleTable::linear(steps, levels, DEFAULT_BETA_START, DEFAULT_BETA_END, DEFAULT_LATER_START)
}

/// Standard normal draws, one row per voxel.
pub fn normal_rows<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<FeatureRow> {
    (0..n)
        .map(|_| {
            let mut r = [0.0; CHANNELS];
            for v in &mut r {
                *v = rng.sample(StandardNormal);
            }
            r
        })
        .collect()
}

fn check_rows(what: &str, rows: usize, expected: usize) -> Result<()> {
    if rows != expected {
        return Err(Error::ShapeMismatch(format!("{rows} {what} rows for {expected} voxels")));
    }
    Ok(())
}

/// Row-level forward process; see [`forward_mix`].
pub fn mix_rows(
    gt: &[FeatureRow],
    upsampled: Option<&[FeatureRow]>,
    t: usize,
    noise: &[FeatureRow],
    schedule: &ScheduleTable,
) -> Vec<FeatureRow> {
    let a = schedule.alpha_bar(t).sqrt();
    let s = (1.0 - schedule.alpha_bar(t)).sqrt();
    let g = schedule.gamma(t);
    gt.iter()
        .enumerate()
        .map(|(i, x)| {
            let mut r = [0.0; CHANNELS];
            for ch in 0..CHANNELS {
                let mixed = match upsampled {
                    Some(u) => g * x[ch] + (1.0 - g) * u[i][ch],
                    None => x[ch],
                };
                r[ch] = a * mixed + s * noise[i][ch];
            }
            r
        })
        .collect()
}

/// `√ᾱ(t)·(γ(t)·gt + (1−γ(t))·up) + √(1−ᾱ(t))·noise` on every channel.
/// Without an upsampled grid the blend is just `gt`.
pub fn forward_mix(
    gt: &SparseGrid,
    upsampled: Option<&SparseGrid>,
    t: usize,
    noise: &[FeatureRow],
    schedule: &ScheduleTable,
) -> Result<SparseGrid> {
    if let Some(u) = upsampled {
        if !u.same_topology(gt) {
            return Err(Error::TopologyMismatch(
                "ground truth and upsampled grids differ in topology".into(),
            ));
        }
    }
    check_rows("noise", noise.len(), gt.len())?;
    gt.with_features(mix_rows(
        gt.features(),
        upsampled.map(|u| u.features()),
        t,
        noise,
        schedule,
    ))
}

/// Posterior-mean coefficients `(c_x0, c_xt)` and standard deviation for the
/// step `t → t−1`.
pub fn posterior(schedule: &ScheduleTable, t: usize) -> (f64, f64, f64) {
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let beta = schedule.beta(t);
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
    let ct = schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let var = beta * (1.0 - ab_prev) / (1.0 - ab);
    (c0, ct, var.max(0.0).sqrt())
}

/// Ancestral DDPM step on raw rows. At `t = 1` the noise is ignored.
pub fn ddpm_rows(
    x0: &[FeatureRow],
    xt: &[FeatureRow],
    t: usize,
    noise: &[FeatureRow],
    schedule: &ScheduleTable,
) -> Vec<FeatureRow> {
    let (c0, ct, sigma) = posterior(schedule, t);
    let sigma = if t == 1 { 0.0 } else { sigma };
    x0.iter()
        .zip(xt)
        .enumerate()
        .map(|(i, (a, b))| {
            let mut r = [0.0; CHANNELS];
            for ch in 0..CHANNELS {
                r[ch] = c0 * a[ch] + ct * b[ch];
                if sigma != 0.0 {
                    r[ch] += sigma * noise[i][ch];
                }
            }
            r
        })
        .collect()
}

/// One DDPM step `t → t−1` from the model's clean-grid prediction.
pub fn ddpm_step(
    model_output: &SparseGrid,
    noisy: &SparseGrid,
    t: usize,
    fresh_noise: &[FeatureRow],
    schedule: &ScheduleTable,
) -> Result<SparseGrid> {
    if !model_output.same_topology(noisy) {
        return Err(Error::TopologyMismatch("prediction and noisy grid differ".into()));
    }
    if t == 0 {
        return Err(Error::Config("DDPM step needs t >= 1".into()));
    }
    if t > 1 {
        check_rows("noise", fresh_noise.len(), noisy.len())?;
    }
    noisy.with_features(ddpm_rows(
        model_output.features(),
        noisy.features(),
        t,
        fresh_noise,
        schedule,
    ))
}

/// Deterministic DDIM update on raw rows.
pub fn ddim_rows(
    x0: &[FeatureRow],
    xt: &[FeatureRow],
    t: usize,
    t_prev: usize,
    schedule: &ScheduleTable,
) -> Vec<FeatureRow> {
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (pa, pn) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    x0.iter()
        .zip(xt)
        .map(|(a, b)| {
            let mut r = [0.0; CHANNELS];
            for ch in 0..CHANNELS {
                let eps = (b[ch] - sa * a[ch]) / sn;
                r[ch] = pa * a[ch] + pn * eps;
            }
            r
        })
        .collect()
}

/// One η = 0 DDIM step `t → t_prev`.
pub fn ddim_step(
    model_output: &SparseGrid,
    noisy: &SparseGrid,
    t: usize,
    t_prev: usize,
    schedule: &ScheduleTable,
) -> Result<SparseGrid> {
    if !model_output.same_topology(noisy) {
        return Err(Error::TopologyMismatch("prediction and noisy grid differ".into()));
    }
    if t_prev >= t {
        return Err(Error::Config(format!("DDIM step needs t > t_prev, got {t} -> {t_prev}")));
    }
    noisy.with_features(ddim_rows(model_output.features(), noisy.features(), t, t_prev, schedule))
}

/// DDIM `(t, t_prev)` pairs from `start` down to 0 in steps of `stride`.
pub fn ddim_timesteps(start: usize, stride: usize) -> Vec<(usize, usize)> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    let mut t = start;
    while t > 0 {
        let prev = t.saturating_sub(stride);
        out.push((t, prev));
        t = prev;
    }
    out
}
