mod common;

use despeckler_core::checkpoint::{load_checkpoint, save_checkpoint};
use despeckler_core::model::{DespeckleNet, Mode, ModelConfig, StageConfig};
use despeckler_core::rng::SplitMix64;
use despeckler_core::train::{TrainConfig, TrainState};
use despeckler_core::{Tensor32, Tensor64};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        stages: vec![StageConfig::new(3, 4, 1, 2), StageConfig::new(3, 8, 2, 2)],
        decoder_dim: 4,
        in_channels: 1,
    }
}

#[test]
fn save_load_forward_is_bit_identical() {
    let dir = common::tmpdir("ckpt");
    let path = dir.join("model.ckpt");
    let net = DespeckleNet::<f32>::new(tiny_config(), 11).unwrap();
    save_checkpoint(&path, &net, None).unwrap();
    let (restored, state) = load_checkpoint::<f32>(&path).unwrap();
    assert!(state.is_none());

    let mut rng = SplitMix64::new(3);
    let x = Tensor32::from_vec(
        vec![1, 16, 16],
        (0..256).map(|_| rng.next_f64() as f32).collect(),
    )
    .unwrap();
    let a = net.forward(&x, &mut Mode::Eval).unwrap().to_vec();
    let b = restored.forward(&x, &mut Mode::Eval).unwrap().to_vec();
    assert_eq!(a, b);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn mismatched_architecture_is_refused() {
    let dir = common::tmpdir("ckpt-mismatch");
    let path = dir.join("model.ckpt");
    let net = DespeckleNet::<f32>::new(tiny_config(), 11).unwrap();
    save_checkpoint(&path, &net, None).unwrap();

    // Hand-corrupt the stage count field (offset: 8 magic + 4 version +
    // 1 dtype + 4 in_channels + 4 decoder_dim).
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[21] = 3;
    std::fs::write(&path, &bytes).unwrap();
    let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
    assert!(
        err.contains("truncated")
            || err.contains("missing")
            || err.contains("parameter")
            || err.contains("invalid config"),
        "{err}"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn wrong_dtype_is_refused() {
    let dir = common::tmpdir("ckpt-dtype");
    let path = dir.join("model.ckpt");
    let net = DespeckleNet::<f32>::new(tiny_config(), 11).unwrap();
    save_checkpoint(&path, &net, None).unwrap();
    let err = load_checkpoint::<f64>(&path).unwrap_err().to_string();
    assert!(err.contains("F32") && err.contains("F64"), "{err}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn corrupt_magic_is_refused() {
    let dir = common::tmpdir("ckpt-magic");
    let path = dir.join("model.ckpt");
    std::fs::write(&path, b"garbage not a checkpoint").unwrap();
    let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
    assert!(err.contains("magic"), "{err}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_state_round_trips() {
    let dir = common::tmpdir("ckpt-state");
    let path = dir.join("model.ckpt");
    let net = DespeckleNet::<f64>::new(tiny_config(), 11).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        seed: 77,
        ..TrainConfig::desk()
    };
    let mut state = TrainState::fresh(&net, &cfg);
    state.epochs_done = 4;
    state.step = 19;
    state.best_val_psnr = 23.5;
    state.adam.entries[0].m[0] = 0.125;
    state.adam.entries[0].v[0] = 0.5;
    save_checkpoint(&path, &net, Some(&state)).unwrap();
    let (_, restored) = load_checkpoint::<f64>(&path).unwrap();
    let restored = restored.expect("state present");
    assert_eq!(restored.epochs_done, 4);
    assert_eq!(restored.step, 19);
    assert_eq!(restored.best_val_psnr, 23.5);
    assert_eq!(restored.seed, 77);
    assert_eq!(restored.adam.entries[0].m[0], 0.125);
    assert_eq!(restored.adam.entries[0].v[0], 0.5);
    assert_eq!(restored.adam.entries.len(), net.parameters().len());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn checkpoint_parameter_count_matches_analytic_formula() {
    // The README documents the per-stage parameter formulas; the config
    // computes them and the checkpoint must carry exactly that many values.
    let dir = common::tmpdir("ckpt-count");
    let path = dir.join("model.ckpt");
    let cfg = ModelConfig::desk();
    let expected = cfg.parameter_count();
    let net = DespeckleNet::<f32>::new(cfg, 1).unwrap();
    save_checkpoint(&path, &net, None).unwrap();
    let (restored, _) = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(restored.parameter_count(), expected);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn f64_checkpoints_also_round_trip() {
    let dir = common::tmpdir("ckpt-f64");
    let path = dir.join("model64.ckpt");
    let net = DespeckleNet::<f64>::new(tiny_config(), 5).unwrap();
    save_checkpoint(&path, &net, None).unwrap();
    let (restored, _) = load_checkpoint::<f64>(&path).unwrap();
    let mut rng = SplitMix64::new(9);
    let x = Tensor64::from_vec(vec![1, 16, 16], (0..256).map(|_| rng.next_f64()).collect()).unwrap();
    assert_eq!(
        net.forward(&x, &mut Mode::Eval).unwrap().to_vec(),
        restored.forward(&x, &mut Mode::Eval).unwrap().to_vec()
    );
    std::fs::remove_dir_all(&dir).ok();
}
