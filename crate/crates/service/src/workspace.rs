//! On-disk layout shared by the CLI and the HTTP sessions.
//!
//! ```text
//! <root>/manifest.json          pyramid metadata and normalization transform
//! <root>/config.toml            run config the checkpoints were trained with
//! <root>/level_{l}.svg1         ground-truth grid per level
//! <root>/checkpoints/level_{l}.svckpt
//! <root>/samples/<name>/        level_{l}.svg1, level_{l}.ply, sample.json
//! ```

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparsegen_core::exemplar::{ExtractConfig, Pyramid, WorldTransform};
use sparsegen_core::grid::{read_svg1, write_svg1, SparseGrid};
use sparsegen_core::net::Checkpoint;
use sparsegen_core::pipeline::{export_points, points_ply_bytes, Generator, LevelModel, RunConfig, Sample, Sampler};
use sparsegen_core::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub extract: ExtractConfig,
    pub transform: WorldTransform,
    /// Voxel edge of level 1 in the normalized frame; each finer level halves it.
    pub base_voxel_edge: f64,
    pub counts: Vec<usize>,
    /// File the exemplar was read from, if any.
    pub source: Option<String>,
}

/// Metadata stored next to a sample's grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub sampler: Sampler,
    pub resolution: [u32; 3],
    pub counts: Vec<usize>,
    pub pre_prune_counts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    manifest: Manifest,
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Format {
        format: "json",
        message: e.to_string(),
    }
}

impl Workspace {
    /// Writes a freshly extracted pyramid into `root`, creating it if needed.
    pub fn create(root: &Path, pyramid: &Pyramid, extract: ExtractConfig, source: Option<String>) -> Result<Self> {
        fs::create_dir_all(root)?;
        for g in pyramid.levels() {
            write_grid(&root.join(format!("level_{}.svg1", g.level())), g)?;
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            extract,
            transform: pyramid.transform,
            base_voxel_edge: pyramid.level(1).voxel_size()[0],
            counts: pyramid.levels().iter().map(SparseGrid::len).collect(),
            source,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(json_error)?;
        fs::write(root.join(MANIFEST_FILE), text)?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| {
            Error::Config(format!("{} is not a workspace ({}: {e})", root.display(), path.display()))
        })?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(json_error)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Config(format!("unsupported manifest version {}", manifest.version)));
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    /// Finds the workspace holding `path`: the path itself or one of its
    /// ancestors with a manifest.
    pub fn enclosing(path: &Path) -> Option<Self> {
        path.ancestors().find_map(|p| Self::open(p).ok())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn num_levels(&self) -> u32 {
        self.manifest.extract.levels
    }

    pub fn voxel_edge(&self, level: u32) -> f64 {
        self.manifest.base_voxel_edge / f64::from(1u32 << (level - 1))
    }

    pub fn pyramid(&self) -> Result<Pyramid> {
        let levels = (1..=self.num_levels())
            .map(|l| read_grid(&self.root.join(format!("level_{l}.svg1")), Some(self.voxel_edge(l))))
            .collect::<Result<Vec<_>>>()?;
        Pyramid::new(levels, self.manifest.transform)
    }

    /// The stored run config, if training has happened.
    pub fn stored_config(&self) -> Result<Option<RunConfig>> {
        let path = self.root.join(CONFIG_FILE);
        if !path.exists() {
            return Ok(None);
        }
        RunConfig::load(&path).map(Some)
    }

    pub fn store_config(&self, config: &RunConfig) -> Result<()> {
        fs::write(self.root.join(CONFIG_FILE), config.to_toml())?;
        Ok(())
    }

    /// Rejects configs whose pyramid shape differs from the extracted one.
    pub fn check_config(&self, config: &RunConfig) -> Result<()> {
        config.validate()?;
        let e = &self.manifest.extract;
        if config.levels != e.levels || config.base_resolution != e.base_resolution {
            return Err(Error::Config(format!(
                "config expects {} levels from base {}, workspace has {} from base {}",
                config.levels, config.base_resolution, e.levels, e.base_resolution
            )));
        }
        Ok(())
    }

    pub fn checkpoint_path(&self, level: u32) -> PathBuf {
        self.root.join("checkpoints").join(format!("level_{level}.svckpt"))
    }

    pub fn load_checkpoint(&self, level: u32) -> Result<Option<Checkpoint>> {
        let path = self.checkpoint_path(level);
        if !path.exists() {
            return Ok(None);
        }
        Checkpoint::read(BufReader::new(fs::File::open(path)?)).map(Some)
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save_checkpoint(&self, level: u32, ck: &Checkpoint) -> Result<()> {
        let path = self.checkpoint_path(level);
        fs::create_dir_all(path.parent().expect("checkpoint has a parent"))?;
        let tmp = path.with_extension("svckpt.tmp");
        fs::write(&tmp, ck.to_bytes())?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Models for every level; fails if any level is untrained.
    pub fn models(&self) -> Result<Vec<LevelModel>> {
        (1..=self.num_levels())
            .map(|l| match self.load_checkpoint(l)? {
                Some(ck) => LevelModel::from_checkpoint(&ck),
                None => Err(Error::Config(format!("level {l} has no checkpoint; run `train` first"))),
            })
            .collect()
    }

    pub fn generator(&self, config: &RunConfig, pyramid: &Pyramid) -> Result<Generator> {
        Generator::new(self.models()?, config, pyramid)
    }

    pub fn sample_dir(&self, name: &str) -> PathBuf {
        self.root.join("samples").join(name)
    }

    /// Writes every level as `.svg1` and as an oriented point PLY in the
    /// exemplar's original frame. The PLY is built from the stored `f32`
    /// grid so that exporting the `.svg1` later gives the same bytes.
    pub fn save_sample(&self, name: &str, sample: &Sample) -> Result<PathBuf> {
        let dir = self.sample_dir(name);
        fs::create_dir_all(&dir)?;
        for g in &sample.levels {
            let path = dir.join(format!("level_{}.svg1", g.level()));
            write_grid(&path, g)?;
            let stored = read_grid(&path, Some(self.voxel_edge(g.level())))?;
            let points = export_points(&stored, &self.manifest.transform);
            fs::write(dir.join(format!("level_{}.ply", g.level())), points_ply_bytes(&points))?;
        }
        let meta = SampleMeta {
            seed: sample.seed,
            sampler: sample.sampler,
            resolution: sample.resolution,
            counts: sample.levels.iter().map(SparseGrid::len).collect(),
            pre_prune_counts: sample.pre_prune_counts.clone(),
        };
        let text = serde_json::to_string_pretty(&meta).map_err(json_error)?;
        fs::write(dir.join("sample.json"), text)?;
        Ok(dir)
    }

    /// Reads a saved sample back. Features come back at `f32` precision.
    pub fn load_sample(&self, name: &str) -> Result<Sample> {
        let dir = self.sample_dir(name);
        let text = fs::read_to_string(dir.join("sample.json"))
            .map_err(|e| Error::Config(format!("no sample `{name}` in {}: {e}", self.root.display())))?;
        let meta: SampleMeta = serde_json::from_str(&text).map_err(json_error)?;
        let levels = (1..=meta.counts.len() as u32)
            .map(|l| read_grid(&dir.join(format!("level_{l}.svg1")), Some(self.voxel_edge(l))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Sample {
            seed: meta.seed,
            sampler: meta.sampler,
            resolution: meta.resolution,
            levels,
            pre_prune_counts: meta.pre_prune_counts,
        })
    }
}

pub fn write_grid(path: &Path, grid: &SparseGrid) -> Result<()> {
    let mut buf = Vec::new();
    write_svg1(grid, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_grid(path: &Path, voxel_edge: Option<f64>) -> Result<SparseGrid> {
    read_svg1(BufReader::new(fs::File::open(path)?), voxel_edge)
}
