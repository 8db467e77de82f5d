//! Cross-module integration: generate -> load -> train a few steps ->
//! checkpoint -> reload -> rollout -> score, plus property-test invariants
//! that span module boundaries.

use bcat_core::dataio::{pad_channels, read_trajectory, write_trajectory, Trajectory};
use bcat_core::datagen::{make_dataset, Family, GenSpec};
use bcat_core::eval::{evaluate, EvalConfig};
use bcat_core::model::{load_checkpoint, ModelConfig, ModelParams};
use bcat_core::rollout::rollout_next_frame;
use bcat_core::tokenizer::{depatchify, patchify, PatchGrid};
use bcat_core::training::{train, Dataset, TrainConfig};
use proptest::prelude::*;

fn small_model() -> ModelConfig {
    ModelConfig {
        feature_dim: 32,
        n_heads: 4,
        n_layers: 1,
        t_input: 3,
        t_horizon: 3,
        ..ModelConfig::tiny()
    }
}

#[test]
fn end_to_end_train_checkpoint_rollout_eval() {
    let data = tempfile::tempdir().unwrap();
    let test_data = tempfile::tempdir().unwrap();
    let template = GenSpec { n_frames: 6, ..GenSpec::defaults(Family::LinearSwe, 0) };
    make_dataset(&template, 4, 21, data.path()).unwrap();
    make_dataset(&template, 2, 99, test_data.path()).unwrap();

    let cfg = small_model();
    let ds = Dataset::load(&data.path().join("manifest.json"), &cfg).unwrap();
    let tc = TrainConfig {
        total_steps: 12,
        batch_size: 2,
        seed: 3,
        checkpoint_every: 6,
        ..TrainConfig::default()
    };
    let out = tempfile::tempdir().unwrap();
    let result = train(&cfg, &tc, &ds, out.path()).unwrap();

    // reload the checkpoint and confirm end-to-end parity with the live params
    let reloaded = load_checkpoint(&result.checkpoint_path).unwrap();
    assert_eq!(reloaded, result.params);

    let eval_cfg = EvalConfig { t_input: 3, t_horizon: 3, eps: 1e-7 };
    let manifests = vec![test_data.path().join("manifest.json")];
    let a = evaluate(&result.params, &manifests, &eval_cfg).unwrap();
    let b = evaluate(&reloaded, &manifests, &eval_cfg).unwrap();
    assert_eq!(a.grand_average.to_bits(), b.grand_average.to_bits());
    assert!(a.grand_average.is_finite());
    assert_eq!(a.trajectories.len(), 2);
}

#[test]
fn rollout_of_written_trajectory_roundtrips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GenSpec { n_frames: 4, ..GenSpec::defaults(Family::AdvDiff, 5) };
    let traj = bcat_core::datagen::generate(&spec).unwrap();
    let path = dir.path().join("input.btrj");
    write_trajectory(&traj, &path).unwrap();
    let loaded = read_trajectory(&path).unwrap();

    let cfg = small_model();
    let params = ModelParams::<f32>::init(&cfg, 1).unwrap();
    let window = loaded.slice_frames(0, 3).unwrap();
    let report = rollout_next_frame(&params, &window, 2, true).unwrap();
    assert_eq!(report.model_calls, 2);
    assert_eq!(report.frames.len(), 2 * 32 * 32 * 4);
    assert!(report.frames.iter().all(|v| v.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn patchify_depatchify_inverse(
        t in 1usize..4,
        side_pow in 1u32..4,
        p_pow in 0u32..3,
        c in 1usize..4,
        seed in any::<u64>(),
    ) {
        let r = 2usize.pow(side_pow + 2); // 8..=32
        let p = 2usize.pow(p_pow.min(side_pow + 2)); // divides r
        let grid = PatchGrid::new(p, r, c).unwrap();
        let mut rng = bcat_core::rng::Rng::seed_from(seed);
        let frames: Vec<f32> = (0..t * r * r * c).map(|_| rng.range(-5.0, 5.0) as f32).collect();
        let tokens = patchify(&frames, t, &grid).unwrap();
        let back = depatchify(&tokens, &grid).unwrap();
        prop_assert_eq!(back, frames);
    }

    #[test]
    fn padding_then_normalizing_keeps_padding_zero(
        c_valid in 1usize..4,
        seed in any::<u64>(),
    ) {
        let (t, h) = (3usize, 4usize);
        let mut rng = bcat_core::rng::Rng::seed_from(seed);
        let frames: Vec<f32> = (0..t * h * h * c_valid).map(|_| rng.range(-3.0, 3.0) as f32).collect();
        let names = (0..c_valid).map(|i| format!("c{i}")).collect();
        let traj = Trajectory::new(frames, t, h, h, c_valid, c_valid, 0.1, 0.1, names).unwrap();
        let padded = pad_channels(&traj, 4).unwrap();
        let stats = bcat_core::dataio::compute_norm_stats(&padded, 2).unwrap();
        let normed = bcat_core::dataio::normalize(&padded, &stats).unwrap();
        prop_assert!(normed.padding_is_zero());
    }

    #[test]
    fn btrj_roundtrip_any_shape(
        t in 1usize..4,
        h in 2usize..6,
        c in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = bcat_core::rng::Rng::seed_from(seed);
        let frames: Vec<f32> = (0..t * h * h * c).map(|_| rng.range(-10.0, 10.0) as f32).collect();
        let names = (0..c).map(|i| format!("ch{i}")).collect();
        let traj = Trajectory::new(frames, t, h, h, c, c, 0.25, 0.5, names).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.btrj");
        write_trajectory(&traj, &path).unwrap();
        let back = read_trajectory(&path).unwrap();
        prop_assert_eq!(back.frames(), traj.frames());
        prop_assert_eq!(back.dt, traj.dt);
        prop_assert_eq!(back.channel_names, traj.channel_names);
    }
}
