//! Command-line driver and HTTP API for sparse-voxel exemplar generation.

pub mod api;
pub mod cli;
pub mod training;
pub mod workspace;
