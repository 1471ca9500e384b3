//! Checkpointed multi-level training shared by the CLI and the HTTP service.

use sparsegen_core::exemplar::Pyramid;
use sparsegen_core::pipeline::{LevelTrainer, RunConfig, TrainingLog};
use sparsegen_core::Result;

use crate::workspace::Workspace;

/// Iterations between checkpoint writes.
pub const DEFAULT_CHECKPOINT_EVERY: u64 = 1000;

/// How a level run starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    /// Continue from an existing checkpoint when there is one.
    Resume,
    /// Ignore existing checkpoints.
    Fresh,
}

fn train_one(
    ws: &Workspace,
    pyramid: &Pyramid,
    config: &RunConfig,
    level: u32,
    start: Start,
    every: u64,
    report: &(dyn Fn(&LevelTrainer) + Sync),
) -> Result<TrainingLog> {
    let existing = match start {
        Start::Resume => ws.load_checkpoint(level)?,
        Start::Fresh => None,
    };
    let mut tr = match existing {
        Some(ck) => LevelTrainer::resume(pyramid, level, config, &ck)?,
        None => LevelTrainer::new(pyramid, level, config)?,
    };
    report(&tr);
    loop {
        tr.run(every.max(1))?;
        ws.save_checkpoint(level, &tr.checkpoint())?;
        report(&tr);
        if tr.is_done() {
            break;
        }
    }
    Ok(tr.finish().1)
}

/// Trains `levels` on one thread each. Levels are independent, so the result
/// does not depend on scheduling. A checkpoint is written every `every`
/// iterations and at the end; `report` sees each trainer after every write.
pub fn train_levels(
    ws: &Workspace,
    pyramid: &Pyramid,
    config: &RunConfig,
    levels: &[u32],
    start: Start,
    every: u64,
    report: &(dyn Fn(&LevelTrainer) + Sync),
) -> Vec<Result<TrainingLog>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = levels
            .iter()
            .map(|&l| s.spawn(move || train_one(ws, pyramid, config, l, start, every, report)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    })
}
