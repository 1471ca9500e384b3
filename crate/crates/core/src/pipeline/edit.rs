//! Edit scripts: resizing, copy/paste and freezing applied to a sample,
//! followed by regeneration of the levels below the deepest edit.
//!
//! Script syntax, one command per line (`#` starts a comment):
//!
//! ```text
//! resize 16 24 16
//! copy_paste 2  4 4 4  12 12 12  to 16 4 4
//! freeze 2
//! ```
//!
//! `copy_paste` takes a level, the source box `min max` and either
//! `to <origin>` or `by <delta>` for the destination.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sample::{Generator, Sample};
use crate::error::{Error, Result};
use crate::grid::{paste, Coord, VoxelBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditCommand {
    /// Regenerate from a level-1 grid of this resolution.
    Resize { resolution: [u32; 3] },
    CopyPaste {
        level: u32,
        min: Coord,
        max: Coord,
        dst_origin: Coord,
    },
    /// Keep this level as is; regeneration starts below it.
    Freeze { level: u32 },
}

impl EditCommand {
    fn level(&self) -> Option<u32> {
        match *self {
            EditCommand::Resize { .. } => None,
            EditCommand::CopyPaste { level, .. } | EditCommand::Freeze { level } => Some(level),
        }
    }
}

impl fmt::Display for EditCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let j = |c: &[i32; 3]| format!("{} {} {}", c[0], c[1], c[2]);
        match self {
            EditCommand::Resize { resolution: r } => write!(f, "resize {} {} {}", r[0], r[1], r[2]),
            EditCommand::CopyPaste {
                level,
                min,
                max,
                dst_origin,
            } => write!(f, "copy_paste {level} {} {} to {}", j(min), j(max), j(dst_origin)),
            EditCommand::Freeze { level } => write!(f, "freeze {level}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditScript {
    pub commands: Vec<EditCommand>,
}

impl FromStr for EditScript {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut commands = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Config(format!("edit script line {}: {msg}", n + 1));
            let words: Vec<&str> = line.split_whitespace().collect();
            let ints = |ws: &[&str]| -> Result<Vec<i64>> {
                ws.iter()
                    .map(|w| w.parse::<i64>().map_err(|_| bad(&format!("`{w}` is not an integer"))))
                    .collect()
            };
            let triple = |v: &[i64]| -> Result<Coord> {
                let mut c = [0i32; 3];
                for (dst, &x) in c.iter_mut().zip(v) {
                    *dst = i32::try_from(x).map_err(|_| bad("coordinate out of range"))?;
                }
                Ok(c)
            };
            let cmd = match words[0] {
                "resize" => {
                    let v = ints(&words[1..])?;
                    if v.len() != 3 || v.iter().any(|&x| x <= 0 || x > i64::from(u32::MAX)) {
                        return Err(bad("resize takes three positive integers"));
                    }
                    EditCommand::Resize {
                        resolution: [v[0] as u32, v[1] as u32, v[2] as u32],
                    }
                }
                "copy_paste" => {
                    if words.len() != 12 || !matches!(words[8], "to" | "by") {
                        return Err(bad("expected `copy_paste L x0 y0 z0 x1 y1 z1 to|by x y z`"));
                    }
                    let level = ints(&words[1..2])?[0];
                    let a = ints(&words[2..8])?;
                    let d = triple(&ints(&words[9..12])?)?;
                    let min = triple(&a[..3])?;
                    let dst_origin = if words[8] == "to" {
                        d
                    } else {
                        [0, 1, 2].map(|i| min[i] + d[i])
                    };
                    EditCommand::CopyPaste {
                        level: u32::try_from(level).map_err(|_| bad("bad level"))?,
                        min,
                        max: triple(&a[3..])?,
                        dst_origin,
                    }
                }
                "freeze" => {
                    let v = ints(&words[1..])?;
                    if v.len() != 1 || v[0] < 1 {
                        return Err(bad("freeze takes one level"));
                    }
                    EditCommand::Freeze { level: v[0] as u32 }
                }
                other => return Err(bad(&format!("unknown command `{other}`"))),
            };
            commands.push(cmd);
        }
        Ok(Self { commands })
    }
}

impl fmt::Display for EditScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.commands {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

impl EditScript {
    /// Checks levels and boxes against a generator and a sample.
    pub fn validate(&self, generator: &Generator, sample: &Sample) -> Result<()> {
        let mut resolution = sample.resolution;
        for c in &self.commands {
            if let Some(level) = c.level() {
                if level == 0 {
                    return Err(Error::Config("levels are numbered from 1".into()));
                }
                if level > generator.num_levels() {
                    return Err(Error::LevelOverflow {
                        level,
                        max: generator.num_levels(),
                    });
                }
            }
            match *c {
                EditCommand::Resize { resolution: r } => resolution = r,
                EditCommand::CopyPaste {
                    level,
                    min,
                    max,
                    dst_origin,
                } => {
                    let res = resolution.map(|r| r << (level - 1));
                    let src = VoxelBox::new(min, max)?;
                    src.check_fits(res)?;
                    let delta = [0, 1, 2].map(|a| dst_origin[a] - min[a]);
                    src.translated(delta).check_fits(res)?;
                }
                EditCommand::Freeze { .. } => {}
            }
        }
        Ok(())
    }

    /// Applies the commands in order, then regenerates every level below
    /// the deepest edited one with the sample's own seed.
    pub fn apply(&self, generator: &Generator, sample: &Sample) -> Result<Sample> {
        self.validate(generator, sample)?;
        let mut current = sample.clone();
        let mut deepest = 0;
        for c in &self.commands {
            match *c {
                EditCommand::Resize { resolution } => {
                    current = generator.sample(current.seed, current.sampler, Some(resolution))?;
                    deepest = 0;
                }
                EditCommand::CopyPaste {
                    level,
                    min,
                    max,
                    dst_origin,
                } => {
                    let i = level as usize - 1;
                    let pasted = paste(&current.levels[i], &VoxelBox::new(min, max)?, dst_origin)?;
                    // An edited level never went through pruning, so its own size stands in.
                    if pasted != current.levels[i] {
                        current.pre_prune_counts[i] = pasted.len();
                        current.levels[i] = pasted;
                    }
                    deepest = deepest.max(level);
                }
                EditCommand::Freeze { level } => deepest = deepest.max(level),
            }
        }
        if deepest == 0 || deepest == generator.num_levels() {
            return Ok(current);
        }
        if current.levels[deepest as usize - 1].is_empty() {
            return Err(Error::EmptySample(deepest));
        }
        generator.resample_below(&current, deepest)
    }
}
