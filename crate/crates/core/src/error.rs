use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("resolution {0:?} is not even along every axis")]
    OddResolution([u32; 3]),
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("cannot subdivide level {level}: finest level is {max}")]
    LevelOverflow { level: u32, max: u32 },
    #[error("cannot pool level {0}: already the coarsest")]
    LevelUnderflow(u32),
    #[error("no voxel survived pruning")]
    EmptyResult,
    #[error("box {min:?}..{max:?} does not fit resolution {resolution:?}")]
    OutOfBounds {
        min: [i32; 3],
        max: [i32; 3],
        resolution: [u32; 3],
    },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("mesh has no usable triangles")]
    EmptyMesh,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("no voxel intersects the mesh surface")]
    NoSurfaceVoxels,
    #[error("resolution {resolution} is not divisible by {divisor}")]
    IndivisibleResolution { resolution: u32, divisor: u32 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("training diverged at level {level}, iteration {iteration}: loss {loss}")]
    Divergence {
        level: u32,
        iteration: usize,
        loss: f64,
    },
    #[error("sample became empty after pruning level {0}")]
    EmptySample(u32),
    #[error("occupancy grids have different resolutions: {0:?} vs {1:?}")]
    ResolutionMismatch([u32; 3], [u32; 3]),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed {format} data: {message}")]
    Format {
        format: &'static str,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable, machine-parseable name of the error class.
    pub fn class(&self) -> &'static str {
        match self {
            Error::OddResolution(_) => "OddResolution",
            Error::TopologyMismatch(_) => "TopologyMismatch",
            Error::LevelOverflow { .. } => "LevelOverflow",
            Error::LevelUnderflow(_) => "LevelUnderflow",
            Error::EmptyResult => "EmptyResult",
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::InvalidBox(_) => "InvalidBox",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::EmptyMesh => "EmptyMesh",
            Error::InvalidMesh(_) => "InvalidMesh",
            Error::NoSurfaceVoxels => "NoSurfaceVoxels",
            Error::IndivisibleResolution { .. } => "IndivisibleResolution",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteGradient(_) => "NonFiniteGradient",
            Error::Divergence { .. } => "Divergence",
            Error::EmptySample(_) => "EmptySample",
            Error::ResolutionMismatch(..) => "ResolutionMismatch",
            Error::EmptyInput(_) => "EmptyInput",
            Error::Config(_) => "Config",
            Error::Format { .. } => "Format",
            Error::Io(_) => "Io",
        }
    }

    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }
}
