//! Training, sampling, editing and export on a tiny two-level pyramid.

use std::sync::OnceLock;

use sparsegen_core::exemplar::{extract_pyramid, shapes::notched_box, Pyramid};
use sparsegen_core::grid::{paste, VoxelBox, MASK};
use sparsegen_core::net::Checkpoint;
use sparsegen_core::pipeline::{
    export_points, grid_points, train_level, train_levels_concurrently, EditCommand, EditScript, Generator,
    LevelModel, LevelTrainer, RunConfig, Sampler,
};
use sparsegen_core::Error;

fn tiny_config() -> RunConfig {
    RunConfig {
        levels: 2,
        base_resolution: 4,
        sample_resolution: 16,
        steps: 20,
        later_start: 8,
        coarsest_iterations: 6,
        iterations: 6,
        upsampler_iterations: 4,
        crop: 4,
        coarsest_crop: 4,
        denoiser_channels: 4,
        upsampler_channels: 3,
        denoiser_lr: 1e-3,
        upsampler_lr: 1e-3,
        final_lr_fraction: 0.5,
        ddim_stride: 4,
        probe_steps: 2,
        ..RunConfig::default()
    }
}

fn pyramid() -> &'static Pyramid {
    static P: OnceLock<Pyramid> = OnceLock::new();
    P.get_or_init(|| {
        extract_pyramid(&notched_box([1.9, 1.2, 0.8], [0.7, 0.35]), &tiny_config().extract_config()).unwrap()
    })
}

fn generator() -> &'static Generator {
    static G: OnceLock<Generator> = OnceLock::new();
    G.get_or_init(|| {
        let config = tiny_config();
        let models = (1..=2).map(|l| train_level(pyramid(), l, &config).unwrap().0).collect();
        Generator::new(models, &config, pyramid()).unwrap()
    })
}

#[test]
fn zero_budget_keeps_initial_parameters() {
    let config = RunConfig {
        coarsest_iterations: 0,
        iterations: 0,
        upsampler_iterations: 0,
        ..tiny_config()
    };
    for level in 1..=2 {
        let fresh = LevelTrainer::new(pyramid(), level, &config).unwrap();
        let (model, log) = train_level(pyramid(), level, &config).unwrap();
        assert_eq!(model.denoiser.params(), fresh.denoiser().params());
        assert!(log.denoiser_losses.is_empty() && log.upsampler_losses.is_empty());
        assert_eq!(log.denoiser_probe.initial, None);
    }
}

#[test]
fn training_logs_finite_losses_and_probes() {
    let (model, log) = train_level(pyramid(), 2, &tiny_config()).unwrap();
    assert_eq!(log.upsampler_losses.len(), 4);
    assert_eq!(log.denoiser_losses.len(), 6);
    assert!(log.denoiser_losses.iter().chain(&log.upsampler_losses).all(|l| l.is_finite() && *l > 0.0));
    assert!(log.denoiser_probe.ratio().is_some());
    assert!(log.upsampler_probe.ratio().is_some());
    assert!(model.upsampler.is_some());
}

#[test]
fn first_step_records_the_initial_probe() {
    let mut tr = LevelTrainer::new(pyramid(), 1, &tiny_config()).unwrap();
    let initial = tr.denoiser_probe().unwrap();
    assert!(initial.is_finite() && initial > 0.0);
    let first = tr.step().unwrap().unwrap();
    assert!(first.is_finite());
    assert_eq!(tr.log().denoiser_probe.initial, Some(initial));
}

#[test]
fn resume_matches_uninterrupted_run_at_every_split() {
    let config = tiny_config();
    for level in 1..=2 {
        let mut straight = LevelTrainer::new(pyramid(), level, &config).unwrap();
        straight.run(u64::MAX).unwrap();
        let want = straight.checkpoint().to_bytes();
        for split in 0..=straight.total_iterations() {
            let mut first = LevelTrainer::new(pyramid(), level, &config).unwrap();
            first.run(split).unwrap();
            let saved = Checkpoint::from_bytes(&first.checkpoint().to_bytes()).unwrap();
            let mut resumed = LevelTrainer::resume(pyramid(), level, &config, &saved).unwrap();
            resumed.run(u64::MAX).unwrap();
            assert_eq!(resumed.checkpoint().to_bytes(), want, "level {level} split {split}");
        }
    }
}

#[test]
fn resume_rejects_mismatched_checkpoints() {
    let config = tiny_config();
    let ck = LevelTrainer::new(pyramid(), 1, &config).unwrap().checkpoint();
    assert!(LevelTrainer::resume(pyramid(), 2, &config, &ck).is_err());
    let wider = RunConfig {
        denoiser_channels: 5,
        ..config
    };
    assert!(LevelTrainer::resume(pyramid(), 1, &wider, &ck).is_err());
}

#[test]
fn concurrent_training_matches_sequential() {
    let config = tiny_config();
    let concurrent = train_levels_concurrently(pyramid(), &[2, 1], &config);
    for (level, result) in [2, 1].into_iter().zip(concurrent) {
        let (a, log_a) = result.unwrap();
        let (b, log_b) = train_level(pyramid(), level, &config).unwrap();
        assert_eq!(a.denoiser.params(), b.denoiser.params());
        assert_eq!(log_a, log_b);
    }
}

#[test]
fn checkpoint_round_trips_models() {
    let mut tr = LevelTrainer::new(pyramid(), 2, &tiny_config()).unwrap();
    tr.run(7).unwrap();
    let model = LevelModel::from_checkpoint(&Checkpoint::from_bytes(&tr.checkpoint().to_bytes()).unwrap()).unwrap();
    assert_eq!(model.denoiser.params(), tr.denoiser().params());
    assert_eq!(model.upsampler.unwrap().params(), tr.upsampler().unwrap().params());
}

#[test]
fn runaway_learning_rate_is_reported_as_divergence() {
    let config = RunConfig {
        denoiser_lr: 1e30,
        coarsest_iterations: 50,
        ..tiny_config()
    };
    let err = train_level(pyramid(), 1, &config).unwrap_err();
    assert!(matches!(err, Error::Divergence { level: 1, .. }), "{err}");
}

#[test]
fn level_bounds_are_checked() {
    let config = tiny_config();
    assert!(LevelTrainer::new(pyramid(), 0, &config).is_err());
    assert!(matches!(
        LevelTrainer::new(pyramid(), 3, &config),
        Err(Error::LevelOverflow { .. })
    ));
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let g = generator();
    for sampler in [Sampler::Ddim, Sampler::Ddpm] {
        let a = g.sample(7, sampler, None).unwrap();
        assert_eq!(a, g.sample(7, sampler, None).unwrap());
        assert_ne!(a.levels, g.sample(8, sampler, None).unwrap().levels);
    }
}

#[test]
fn samples_are_pruned_and_start_dense() {
    let s = generator().sample(3, Sampler::Ddim, None).unwrap();
    assert_eq!(s.pre_prune_counts[0], 64);
    assert_eq!(s.pre_prune_counts[1], 8 * s.levels[0].len());
    for g in &s.levels {
        assert!(!g.is_empty());
        assert!(g.features().iter().all(|f| f[MASK] >= 0.0));
    }
}

#[test]
fn resize_bounds_topology_and_scales_by_two() {
    let s = generator().sample(4, Sampler::Ddim, Some([4, 6, 4])).unwrap();
    assert_eq!(s.resolution, [4, 6, 4]);
    assert_eq!(s.pre_prune_counts[0], 96);
    assert_eq!(s.levels[0].resolution(), [4, 6, 4]);
    assert_eq!(s.levels[1].resolution(), [8, 12, 8]);
    assert_eq!(s.levels[0].voxel_size(), pyramid().level(1).voxel_size());
}

#[test]
fn resample_below_replays_the_suffix() {
    let g = generator();
    let s = g.sample(11, Sampler::Ddim, None).unwrap();
    let again = g.resample_below(&s, 1).unwrap();
    assert_eq!(again, s);
    let top = g.resample_below(&s, 2).unwrap();
    assert_eq!(top, s);
    assert!(g.resample_below(&s, 3).is_err());
}

#[test]
fn identity_paste_edit_reproduces_the_sample() {
    let g = generator();
    let s = g.sample(5, Sampler::Ddim, None).unwrap();
    let script: EditScript = "copy_paste 1 0 0 0 2 2 2 to 0 0 0".parse().unwrap();
    assert_eq!(script.apply(g, &s).unwrap(), s);
    // Pruning usually leaves fewer voxels than were denoised; the kept level's count must survive.
    let mut pruned = s.clone();
    pruned.pre_prune_counts[0] += 7;
    assert_eq!(script.apply(g, &pruned).unwrap(), pruned);
}

#[test]
fn copy_paste_edits_the_level_and_keeps_coarser_ones() {
    let g = generator();
    let s = g.sample(5, Sampler::Ddim, None).unwrap();
    let script = EditScript {
        commands: vec![EditCommand::CopyPaste {
            level: 1,
            min: [0, 0, 0],
            max: [2, 4, 4],
            dst_origin: [2, 0, 0],
        }],
    };
    let edited = script.apply(g, &s).unwrap();
    let bx = VoxelBox::new([0, 0, 0], [2, 4, 4]).unwrap();
    assert_eq!(edited.levels[0], paste(&s.levels[0], &bx, [2, 0, 0]).unwrap());
    assert_eq!(edited.levels.len(), 2);
}

#[test]
fn edit_scripts_validate_boxes_and_levels() {
    let g = generator();
    let s = g.sample(5, Sampler::Ddim, None).unwrap();
    for bad in [
        "copy_paste 1 0 0 0 2 2 2 to 3 0 0",
        "copy_paste 3 0 0 0 1 1 1 to 0 0 0",
        "copy_paste 1 2 2 2 1 3 3 to 0 0 0",
        "freeze 4",
    ] {
        let script: EditScript = bad.parse().unwrap();
        assert!(script.apply(g, &s).is_err(), "{bad}");
    }
    let resized: EditScript = "resize 4 6 4".parse().unwrap();
    let r = resized.apply(g, &s).unwrap();
    assert_eq!(r, g.sample(5, Sampler::Ddim, Some([4, 6, 4])).unwrap());
}

#[test]
fn forced_negative_masks_report_empty_samples() {
    let config = tiny_config();
    let mut models: Vec<LevelModel> = (1..=2)
        .map(|l| LevelTrainer::new(pyramid(), l, &config).unwrap().finish().0)
        .collect();
    let d = &mut models[0].denoiser;
    let spec = d.layout().specs().iter().find(|s| s.name == "out.bias").unwrap().clone();
    d.params_mut()[spec.offset + MASK] = -100.0;
    let g = Generator::new(models, &config, pyramid()).unwrap();
    assert!(matches!(g.sample(0, Sampler::Ddim, None), Err(Error::EmptySample(1))));
}

#[test]
fn exported_ground_truth_lands_on_extraction_samples() {
    let p = pyramid();
    for grid in p.levels() {
        let points = export_points(grid, &p.transform);
        for (pt, world) in points.iter().zip(grid_points(grid)) {
            let back = p.transform.apply(pt.position);
            for a in 0..3 {
                assert!((back[a] - world[a]).abs() <= 1e-6);
            }
            let n = pt.normal;
            assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() < 1e-9);
            assert!(pt.rgb.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }
}
