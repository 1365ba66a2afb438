mod common;

use std::fs;

use ndarray::Array3;
use rand::Rng;
use siampf::evalbench::TrackSequence;
use siampf::frame::{EXEMPLAR_SIZE, INSTANCE_SIZE};
use siampf::siamese::{ModelSwitches, StepOptions};
use siampf::training::{
    collate, fit_batch, sample_indexed_pair, sample_pair, train, Checkpoint, ResponseGeometry, Sgd,
    TrainConfig,
};
use siampf::{Error, FeatureMap, Frame, ModelConfig, TargetState};

use common::*;

fn tiny_train() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        steps_per_epoch: 2,
        batch_size: 2,
        lr_schedule: vec![(0, 1e-2), (1, 1e-3)],
        ..TrainConfig::desk_scale()
    }
}

fn trained_checkpoint() -> Checkpoint {
    let data: Vec<TrackSequence> = train_set().into_iter().take(3).collect();
    train(&tiny_train(), &data, desk_model(3), &ModelConfig::desk_scale(), &mut |_| {})
        .unwrap()
        .0
}

#[test]
fn default_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!((cfg.epochs, cfg.batch_size, cfg.lambda), (50, 8, 0.75));
    assert_eq!(cfg.lr_at(0), 1e-1);
    assert_eq!(cfg.lr_at(19), 1e-1);
    assert_eq!(cfg.lr_at(25), 1e-2);
    assert_eq!(cfg.lr_at(49), 1e-3);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let ckpt = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.train_config, Some(tiny_train()));

    let mut r = rng(9);
    let patch = FeatureMap::new(Array3::from_shape_fn((3, EXEMPLAR_SIZE, EXEMPLAR_SIZE), |_| r.random_range(0.0..255.0f32))).unwrap();
    let x = ndarray::Array4::from_shape_fn((1, 3, INSTANCE_SIZE, INSTANCE_SIZE), |_| r.random_range(0.0..255.0f32));
    let a = ckpt.model.embed_exemplar(&patch, ModelSwitches::default()).unwrap();
    let b = back.model.embed_exemplar(&patch, ModelSwitches::default()).unwrap();
    let ra = ckpt.model.score(&a, &x).unwrap();
    let rb = back.model.score(&b, &x).unwrap();
    assert_eq!(ra[0].v.values(), rb[0].v.values());
    assert_eq!(ra[0].a.as_ref().unwrap().values(), rb[0].a.as_ref().unwrap().values());
}

#[test]
fn truncated_checkpoint_is_a_load_error() {
    let ckpt = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    ckpt.save(&path).unwrap();
    let bytes = fs::read(&path).unwrap();
    for cut in [4, 100, bytes.len() / 2, bytes.len() - 1] {
        fs::write(&path, &bytes[..cut]).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(matches!(err, Error::Load(_)), "cut {cut}: {err:?}");
    }
}

#[test]
fn checkpoint_of_other_network_names_the_layer() {
    let ckpt = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    ckpt.save(&path).unwrap();
    let other = ModelConfig {
        width_divisor: 8,
        ..ModelConfig::desk_scale()
    };
    let err = Checkpoint::load_expecting(&path, &other).unwrap_err().to_string();
    assert!(err.contains("backbone layer conv1"), "{err}");
    Checkpoint::load_expecting(&path, &ModelConfig::desk_scale()).unwrap();
}

#[test]
fn missing_checkpoint_names_the_path() {
    let err = Checkpoint::load(std::path::Path::new("/nonexistent/ckpt.safetensors")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/ckpt.safetensors"), "{err}");
}

#[test]
fn overfit_loss_is_nearly_monotone_after_warmup() {
    let mut model = desk_model(8);
    let cfg = TrainConfig::desk_scale();
    let geometry = ResponseGeometry::of(model.backbone.spec()).unwrap();
    let pair = sample_indexed_pair::<f32>(&train_set(), &cfg, geometry, 0, 0).unwrap();
    let batch = collate(&[pair]);
    let opts = StepOptions {
        lambda: 0.75,
        frozen_convs: 9,
        switches: ModelSwitches::default(),
    };
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let losses = fit_batch(&mut model, &batch, &opts, &mut sgd, 1e-2, 200).unwrap();
    let rises = losses[20..].windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 3, "{rises} increases after warm-up");
    assert!(losses[199] < 0.1 * losses[0]);
}

#[test]
fn divergence_names_the_step() {
    let cfg = TrainConfig {
        epochs: 2,
        steps_per_epoch: 20,
        batch_size: 2,
        lr_schedule: vec![(0, 1e12)],
        ..TrainConfig::desk_scale()
    };
    let data: Vec<TrackSequence> = train_set().into_iter().take(2).collect();
    match train(&cfg, &data, desk_model(1), &ModelConfig::desk_scale(), &mut |_| {}) {
        Err(e @ Error::Divergence { .. }) => assert!(e.to_string().contains("step"), "{e}"),
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn two_frame_sequence_yields_that_pair() {
    let a = Frame::filled(200, 160, [10, 200, 30]).unwrap();
    let b = Frame::filled(200, 160, [200, 10, 30]).unwrap();
    let boxes = vec![TargetState::new(100.0, 80.0, 30.0, 30.0); 2];
    let seq = TrackSequence::in_memory("pair", vec![a, b], boxes).unwrap();
    let cfg = TrainConfig {
        max_translation: 0.0,
        max_scale_jitter: 0.0,
        ..TrainConfig::default()
    };
    let geometry = ResponseGeometry { size: 17, stride: 8 };
    for seed in 0..5 {
        let pair = sample_pair::<f32>(std::slice::from_ref(&seq), &cfg, geometry, &mut rng(seed)).unwrap();
        assert_eq!(pair.exemplar_patch.get(60, 60, 1), 200.0);
        assert_eq!(pair.instance_patch.get(120, 120, 0), 200.0);
        assert_eq!((pair.label.center.row, pair.label.center.col), (8.0, 8.0));
        assert_eq!(pair.label.positives(), 13);
    }
}

#[test]
fn training_rejects_sequences_without_pairs() {
    let one = TrackSequence::in_memory("one", vec![Frame::filled(64, 64, [0, 0, 0]).unwrap()], vec![TargetState::new(32.0, 32.0, 10.0, 10.0)]).unwrap();
    let err = train(&tiny_train(), &[one], desk_model(1), &ModelConfig::desk_scale(), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err:?}");
}
