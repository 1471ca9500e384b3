#![allow(dead_code)]

use sparsegen_core::exemplar::{shapes::notched_box, write_ply_mesh};
use sparsegen_core::pipeline::RunConfig;

/// Two-level config that trains in well under a second.
pub fn tiny_config() -> RunConfig {
    RunConfig {
        levels: 2,
        base_resolution: 4,
        sample_resolution: 16,
        steps: 20,
        later_start: 8,
        coarsest_iterations: 30,
        iterations: 30,
        upsampler_iterations: 10,
        crop: 4,
        coarsest_crop: 4,
        denoiser_channels: 4,
        upsampler_channels: 3,
        denoiser_lr: 1e-3,
        upsampler_lr: 1e-3,
        ddim_stride: 4,
        probe_steps: 2,
        ..RunConfig::default()
    }
}

pub fn mesh_ply() -> Vec<u8> {
    let mut out = Vec::new();
    write_ply_mesh(&notched_box([1.9, 1.2, 0.8], [0.7, 0.35]), &mut out).unwrap();
    out
}

/// Vertex count from a PLY header.
pub fn ply_vertex_count(bytes: &[u8]) -> usize {
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(512)]);
    let line = text.lines().find(|l| l.starts_with("element vertex")).unwrap();
    line.split_whitespace().nth(2).unwrap().parse().unwrap()
}
