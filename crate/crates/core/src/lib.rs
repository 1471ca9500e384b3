//! Single-exemplar multiscale sparse-voxel diffusion.

pub mod diffuse;
pub mod error;
pub mod eval;
pub mod exemplar;
pub mod grid;
pub mod net;
pub mod pipeline;

pub use error::{Error, Result};
