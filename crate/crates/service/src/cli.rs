//! `sparsegen` command line.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sparsegen_core::eval::{chamfer, distance_matrix, pairwise_diversity, voxelize_points};
use sparsegen_core::exemplar::{extract_pyramid, load_mesh, WorldTransform};
use sparsegen_core::pipeline::{export_points, grid_points, points_ply_bytes, EditScript, RunConfig, Sampler};
use sparsegen_core::{Error, Result};

use crate::training::{train_levels, Start, DEFAULT_CHECKPOINT_EVERY};
use crate::workspace::{read_grid, Workspace};

#[derive(Debug, Parser)]
#[command(name = "sparsegen", version, about = "Generate variations of a single 3D exemplar")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Run config (TOML). Defaults to the workspace's stored config, then
    /// to the built-in defaults.
    #[arg(long, env = "SPARSEGEN_CONFIG")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract the ground-truth pyramid of a PLY or OBJ mesh.
    Extract {
        mesh: PathBuf,
        #[arg(short, long, env = "SPARSEGEN_DATA_DIR")]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train all levels in parallel, or a single one.
    Train {
        #[arg(env = "SPARSEGEN_DATA_DIR")]
        dir: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        level: Option<u32>,
        /// Start over instead of resuming from existing checkpoints.
        #[arg(long)]
        fresh: bool,
        #[arg(long, default_value_t = DEFAULT_CHECKPOINT_EVERY)]
        checkpoint_every: u64,
    },
    /// Generate samples with seeds `seed..seed+count`.
    Sample {
        #[arg(env = "SPARSEGEN_DATA_DIR")]
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Level-1 resolution as `X,Y,Z`.
        #[arg(long, value_parser = parse_triple)]
        resize: Option<[u32; 3]>,
        #[arg(long, default_value = "ddim")]
        sampler: Sampler,
    },
    /// Apply an edit script to a sample and regenerate the finer levels.
    Edit {
        #[arg(env = "SPARSEGEN_DATA_DIR")]
        dir: PathBuf,
        #[arg(long)]
        script: PathBuf,
        /// Saved sample to edit; without it the sample is regenerated from `--seed`.
        #[arg(long)]
        sample: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "ddim")]
        sampler: Sampler,
        /// Name of the edited sample; defaults to `<source>_edit`.
        #[arg(long)]
        name: Option<String>,
    },
    /// Convert an `.svg1` grid to an oriented point PLY.
    Export {
        grid: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Diversity and fidelity of generated samples.
    Eval {
        #[arg(env = "SPARSEGEN_DATA_DIR")]
        dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Occupancy resolution for the diversity metric.
        #[arg(long, default_value_t = 64)]
        resolution: u32,
        /// Writes the pairwise `1 - IoU` matrix here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the HTTP API over sessions stored in `dir`.
    Serve {
        #[arg(env = "SPARSEGEN_DATA_DIR")]
        dir: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn parse_triple(s: &str) -> std::result::Result<[u32; 3], String> {
    let v: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, z] if x > 0 && y > 0 && z > 0 => Ok([x, y, z]),
        _ => Err("expected three positive integers X,Y,Z".into()),
    }
}

/// Explicit path, then the workspace's stored config, then the defaults.
fn resolve_config(arg: &ConfigArg, ws: Option<&Workspace>) -> Result<RunConfig> {
    if let Some(path) = &arg.config {
        return RunConfig::load(path);
    }
    if let Some(stored) = ws.map(Workspace::stored_config).transpose()?.flatten() {
        return Ok(stored);
    }
    Ok(RunConfig::default())
}

fn stored_or_default(ws: &Workspace) -> Result<RunConfig> {
    Ok(ws.stored_config()?.unwrap_or_default())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract { mesh, out, config } => extract(&mesh, &out, &config),
        Command::Train {
            dir,
            config,
            level,
            fresh,
            checkpoint_every,
        } => train(&dir, &config, level, fresh, checkpoint_every),
        Command::Sample {
            dir,
            seed,
            count,
            resize,
            sampler,
        } => sample(&dir, seed, count, resize, sampler),
        Command::Edit {
            dir,
            script,
            sample,
            seed,
            sampler,
            name,
        } => edit(&dir, &script, sample, seed, sampler, name),
        Command::Export { grid, out } => export(&grid, &out),
        Command::Eval {
            dir,
            samples,
            seed,
            resolution,
            csv,
        } => eval(&dir, samples, seed, resolution, csv.as_deref()),
        Command::Serve {
            dir,
            port,
            host,
            config,
        } => {
            let config = resolve_config(&config, None)?;
            crate::api::serve(&dir, config, &host, port)
        }
    }
}

fn extract(mesh: &Path, out: &Path, config: &ConfigArg) -> Result<()> {
    let config = resolve_config(config, None)?;
    config.validate()?;
    let started = Instant::now();
    let mesh_data = load_mesh(mesh)?;
    let extract = config.extract_config();
    let pyramid = extract_pyramid(&mesh_data, &extract)?;
    let ws = Workspace::create(out, &pyramid, extract, Some(mesh.display().to_string()))?;
    for g in pyramid.levels() {
        println!("level={} resolution={:?} voxels={}", g.level(), g.resolution(), g.len());
    }
    println!("workspace={} seconds={:.2}", ws.root().display(), started.elapsed().as_secs_f64());
    Ok(())
}

fn train(dir: &Path, config: &ConfigArg, level: Option<u32>, fresh: bool, every: u64) -> Result<()> {
    let ws = Workspace::open(dir)?;
    let config = resolve_config(config, Some(&ws))?;
    ws.check_config(&config)?;
    if let Some(stored) = ws.stored_config()? {
        if level.is_some() && stored != config {
            return Err(Error::Config(
                "workspace was trained with a different config; train all levels to replace it".into(),
            ));
        }
    }
    let levels: Vec<u32> = match level {
        Some(l) if l == 0 || l > config.levels => {
            return Err(Error::LevelOverflow {
                level: l,
                max: config.levels,
            })
        }
        Some(l) => vec![l],
        None => (1..=config.levels).collect(),
    };
    ws.store_config(&config)?;
    let pyramid = ws.pyramid()?;
    let started = Instant::now();
    let out = Mutex::new(());
    let report = |tr: &sparsegen_core::pipeline::LevelTrainer| {
        let _g = out.lock().unwrap();
        let log = tr.log();
        let last = log.denoiser_losses.last().or(log.upsampler_losses.last());
        eprintln!(
            "level {} iteration {}/{} loss {} ({:.1}s)",
            tr.level(),
            tr.iterations_done(),
            tr.total_iterations(),
            last.map_or("-".into(), |l| format!("{l:.5}")),
            started.elapsed().as_secs_f64()
        );
    };
    let start = if fresh { Start::Fresh } else { Start::Resume };
    let results = train_levels(&ws, &pyramid, &config, &levels, start, every, &report);
    for (l, r) in levels.iter().zip(results) {
        let log = r?;
        let ratio = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.4}"));
        println!(
            "level={l} denoiser_loss_ratio={} upsampler_loss_ratio={}",
            ratio(log.denoiser_probe.ratio()),
            ratio(log.upsampler_probe.ratio())
        );
    }
    println!("seconds={:.2}", started.elapsed().as_secs_f64());
    Ok(())
}

fn sample_name(seed: u64, resize: Option<[u32; 3]>, sampler: Sampler) -> String {
    let mut name = format!("seed_{seed}");
    if let Some([x, y, z]) = resize {
        name += &format!("_{x}x{y}x{z}");
    }
    if sampler == Sampler::Ddpm {
        name += "_ddpm";
    }
    name
}

fn sample(dir: &Path, seed: u64, count: u64, resize: Option<[u32; 3]>, sampler: Sampler) -> Result<()> {
    let ws = Workspace::open(dir)?;
    let config = stored_or_default(&ws)?;
    let pyramid = ws.pyramid()?;
    let generator = ws.generator(&config, &pyramid)?;
    for s in seed..seed + count {
        let started = Instant::now();
        let sample = generator.sample(s, sampler, resize)?;
        let name = sample_name(s, resize, sampler);
        let path = ws.save_sample(&name, &sample)?;
        let counts: Vec<usize> = sample.levels.iter().map(|g| g.len()).collect();
        println!(
            "sample={name} seed={s} counts={counts:?} path={} seconds={:.2}",
            path.display(),
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn edit(
    dir: &Path,
    script: &Path,
    source: Option<String>,
    seed: u64,
    sampler: Sampler,
    name: Option<String>,
) -> Result<()> {
    let ws = Workspace::open(dir)?;
    let config = stored_or_default(&ws)?;
    let pyramid = ws.pyramid()?;
    let generator = ws.generator(&config, &pyramid)?;
    let script: EditScript = std::fs::read_to_string(script)?.parse()?;
    let (base, base_name) = match source {
        Some(n) => (ws.load_sample(&n)?, n),
        None => (generator.sample(seed, sampler, None)?, sample_name(seed, None, sampler)),
    };
    let edited = script.apply(&generator, &base)?;
    let name = name.unwrap_or_else(|| format!("{base_name}_edit"));
    let path = ws.save_sample(&name, &edited)?;
    let counts: Vec<usize> = edited.levels.iter().map(|g| g.len()).collect();
    println!("sample={name} counts={counts:?} path={}", path.display());
    Ok(())
}

fn export(grid: &Path, out: &Path) -> Result<()> {
    let ws = Workspace::enclosing(grid.parent().unwrap_or(Path::new(".")));
    let probe = read_grid(grid, None)?;
    let (edge, transform) = match &ws {
        Some(ws) if probe.level() >= 1 && probe.level() <= ws.num_levels() => {
            (Some(ws.voxel_edge(probe.level())), ws.manifest().transform)
        }
        _ => (None, WorldTransform::identity()),
    };
    let g = read_grid(grid, edge)?;
    let points = export_points(&g, &transform);
    std::fs::write(out, points_ply_bytes(&points))?;
    println!("points={} path={}", points.len(), out.display());
    Ok(())
}

fn eval(dir: &Path, count: u64, seed: u64, resolution: u32, csv: Option<&Path>) -> Result<()> {
    let ws = Workspace::open(dir)?;
    let config = stored_or_default(&ws)?;
    let pyramid = ws.pyramid()?;
    let generator = ws.generator(&config, &pyramid)?;
    let reference = grid_points(pyramid.finest());
    let edge = pyramid.finest().voxel_size()[0];
    let started = Instant::now();
    let mut occupancies = Vec::new();
    let mut chamfers = Vec::new();
    let mut empty = 0;
    for s in seed..seed + count {
        match generator.sample(s, Sampler::Ddim, None) {
            Ok(sample) => {
                let points = grid_points(sample.finest());
                chamfers.push(chamfer(&points, &reference)?);
                occupancies.push(voxelize_points(&points, resolution));
            }
            Err(Error::EmptySample(_)) => empty += 1,
            Err(e) => return Err(e),
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    println!("samples={count}");
    println!("survived={}", count - empty);
    println!("sampling_seconds={seconds:.2}");
    if occupancies.len() >= 2 {
        println!("shell_diversity={:.4}", pairwise_diversity(&occupancies)?);
    }
    if !chamfers.is_empty() {
        let mean = chamfers.iter().sum::<f64>() / chamfers.len() as f64;
        let max = chamfers.iter().copied().fold(0.0, f64::max);
        println!("chamfer_mean={mean:.6}");
        println!("chamfer_mean_voxels={:.3}", mean / edge);
        println!("chamfer_max_voxels={:.3}", max / edge);
    }
    if let Some(path) = csv {
        let m = distance_matrix(&occupancies)?;
        let text: String = m
            .iter()
            .map(|row| row.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        std::fs::write(path, text)?;
    }
    Ok(())
}
