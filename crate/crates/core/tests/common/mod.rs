#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siampf::evalbench::TrackSequence;
use siampf::labels_loss::{balance_weights, make_label_map, GridPoint};
use siampf::netmodel::{ChannelAttention, ConvLayerSpec as L, Init, Network, NetworkSpec};
use siampf::siamese::PairBatch;
use siampf::synthetic::{generate_dataset, SyntheticConfig};
use siampf::training::{train, Checkpoint, TrainConfig, TrainReport};
use siampf::{ModelConfig, SiameseModel};
use ndarray::Array4;

pub const TRAIN_SEED: u64 = 100;
pub const TEST_SEED: u64 = 200;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Backbone with two pools (tap after the first) and a one-pool branch;
/// 31 and 47 pixel inputs give 5×5 responses on both heads.
pub fn mini_specs() -> (NetworkSpec, NetworkSpec) {
    let backbone = NetworkSpec {
        name: "backbone".into(),
        layers: vec![
            L::conv(3, 3, 4, 1),
            L::conv(3, 4, 4, 1),
            L::maxpool(2, 2),
            L::conv(3, 4, 4, 1),
            L::conv(3, 4, 4, 1),
            L::maxpool(2, 2),
            L::conv(3, 4, 4, 1).without_post(),
        ],
        tap_index: Some(2),
    };
    let branch = NetworkSpec {
        name: "branch".into(),
        layers: vec![L::conv(3, 4, 4, 1), L::maxpool(3, 2), L::conv(3, 4, 4, 1).without_post()],
        tap_index: None,
    };
    (backbone, branch)
}

pub fn mini_model(seed: u64) -> SiameseModel<f64> {
    let (backbone, branch) = mini_specs();
    let mut r = rng(seed);
    SiameseModel::from_parts(
        Network::random(backbone, &mut r).unwrap(),
        Network::random(branch, &mut r).unwrap(),
        ChannelAttention::random(4, 2, &mut r).unwrap(),
        0.05,
    )
    .unwrap()
}

pub fn mini_batch(n: usize, seed: u64) -> PairBatch<f64> {
    let mut r = rng(seed);
    let mut labels = Vec::new();
    for _ in 0..n {
        let c = GridPoint::new(r.random_range(1.0..3.0), r.random_range(1.0..3.0));
        labels.push(make_label_map(5, 4, 4.0, c).unwrap());
    }
    PairBatch {
        exemplars: Array4::from_shape_fn((n, 3, 31, 31), |_| r.random_range(0.0..255.0)),
        instances: Array4::from_shape_fn((n, 3, 47, 47), |_| r.random_range(0.0..255.0)),
        weights: labels.iter().map(balance_weights).collect(),
        labels,
    }
}

pub fn train_set() -> Vec<TrackSequence> {
    generate_dataset(&SyntheticConfig::default(), "train", 24, TRAIN_SEED).unwrap()
}

pub fn test_set() -> Vec<TrackSequence> {
    generate_dataset(&SyntheticConfig::default(), "test", 6, TEST_SEED).unwrap()
}

pub fn named(seqs: Vec<TrackSequence>) -> Vec<(String, siampf::Result<TrackSequence>)> {
    seqs.into_iter().map(|s| (s.name.clone(), Ok(s))).collect()
}

pub fn desk_model(seed: u64) -> SiameseModel<f32> {
    SiameseModel::new(&ModelConfig::desk_scale(), &Init::Random, seed).unwrap()
}

/// Trains the desk-scale model on the synthetic training set.
pub fn train_desk_scale() -> (Checkpoint, TrainReport) {
    let cfg = TrainConfig::desk_scale();
    train(&cfg, &train_set(), desk_model(cfg.seed), &ModelConfig::desk_scale(), &mut |e| {
        eprintln!("epoch {:>2}  lr {:.0e}  loss {:.4}", e.epoch, e.lr, e.mean_loss)
    })
    .unwrap()
}
