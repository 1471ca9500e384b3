//! Training and sampling orchestration, edits and point export.

mod config;
mod edit;
mod export;
mod sample;
mod streams;
mod train;

pub use config::RunConfig;
pub use edit::{EditCommand, EditScript};
pub use export::{export_points, grid_points, points_ply_bytes, read_points_ply, write_points_ply, OrientedPoint};
pub use sample::{Generator, Sample, Sampler};
pub use streams::{rng_from_state, rng_state, stream_rng, Stream};
pub use train::{train_level, train_levels_concurrently, LevelModel, LevelTrainer, Probe, TrainingLog};
