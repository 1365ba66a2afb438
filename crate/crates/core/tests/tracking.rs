mod common;

use std::sync::OnceLock;

use ndarray::{s, Array4, Axis};
use siampf::correlation::{fuse, FusionConfig};
use siampf::frame::{crop_patch, EXEMPLAR_SIZE, INSTANCE_SIZE};
use siampf::siamese::ModelSwitches;
use siampf::synthetic::{generate_sequence, SyntheticConfig};
use siampf::tracker::GateStrategy;
use siampf::training::Checkpoint;
use siampf::{Error, Frame, TargetState, Tracker, TrackerConfig};

use common::*;

fn trained() -> &'static Checkpoint {
    static CKPT: OnceLock<Checkpoint> = OnceLock::new();
    CKPT.get_or_init(|| train_desk_scale().0)
}

/// Drift is the systematic offset of the predicted center: the mean over
/// the whole sequence and over its last ten frames. Per-frame jitter is
/// bounded separately by half a response cell.
#[test]
fn static_target_does_not_drift() {
    let cfg = SyntheticConfig {
        frames: 50,
        max_speed: 0.0,
        max_scale_drift: 0.0,
        ..SyntheticConfig::default()
    };
    let seq = generate_sequence(&cfg, "static", 31).unwrap();
    let gt = seq.ground_truth[0];
    let mut t = Tracker::init(&trained().model, seq.frame(0).unwrap().as_ref(), gt, TrackerConfig::default()).unwrap();
    let mut offsets = Vec::new();
    for i in 1..seq.len() {
        let (b, _) = t.track_frame(seq.frame(i).unwrap().as_ref()).unwrap();
        offsets.push((b.center_x - gt.center_x, b.center_y - gt.center_y));
    }
    let mean_offset = |o: &[(f64, f64)]| {
        let n = o.len() as f64;
        let (x, y) = o.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        (x / n).hypot(y / n)
    };
    let whole = mean_offset(&offsets);
    let tail = mean_offset(&offsets[offsets.len() - 10..]);
    let worst = offsets.iter().map(|(x, y)| x.hypot(*y)).fold(0.0, f64::max);
    assert!(whole < 2.0 && tail < 2.0, "drift {whole:.2} px overall, {tail:.2} px over the last 10 frames");
    assert!(worst < 4.0, "per-frame error {worst:.2} px");
}

fn blank_frame() -> Frame {
    Frame::filled(200, 160, [128, 128, 128]).unwrap()
}

#[test]
fn blank_frame_fails_gate_and_freezes_size() {
    let model = &trained().model;
    for seq in &test_set() {
        let mut t = Tracker::init(model, seq.frame(0).unwrap().as_ref(), seq.ground_truth[0], TrackerConfig::default()).unwrap();
        for i in 1..8 {
            let (_, d) = t.track_frame(seq.frame(i).unwrap().as_ref()).unwrap();
            assert_eq!(d.gate, Some(true), "{} frame {i}", seq.name);
        }
        let before = t.target();
        let (after, d) = t.track_frame(&blank_frame()).unwrap();
        assert_eq!(d.gate, Some(false), "{}: apcep {:.3}", seq.name, d.apcep);
        assert_eq!(d.apcep, 0.0);
        assert_eq!((after.width, after.height), (before.width, before.height));
    }
}

#[test]
fn freeze_all_keeps_the_box_on_gate_failure() {
    let seq = &test_set()[1];
    let config = TrackerConfig {
        gate_strategy: GateStrategy::FreezeAll,
        ..TrackerConfig::default()
    };
    let mut t = Tracker::init(&trained().model, seq.frame(0).unwrap().as_ref(), seq.ground_truth[0], config).unwrap();
    for i in 1..6 {
        t.track_frame(seq.frame(i).unwrap().as_ref()).unwrap();
    }
    let before = t.target();
    let (after, d) = t.track_frame(&blank_frame()).unwrap();
    assert_eq!(d.gate, Some(false));
    assert_eq!(after, before);
}

#[test]
fn eight_pixel_shift_moves_response_one_cell() {
    let model = desk_model(12);
    let cfg = SyntheticConfig {
        frame_width: 360,
        frame_height: 360,
        ..SyntheticConfig::default()
    };
    let seq = generate_sequence(&cfg, "canvas", 4).unwrap();
    let frame = seq.frame(0).unwrap();
    let gt = seq.ground_truth[0];
    let z = crop_patch::<f32>(frame.as_ref(), &gt, EXEMPLAR_SIZE, 0.5).unwrap();
    let exemplar = model.embed_exemplar(&z, ModelSwitches::default()).unwrap();

    let pixels = frame.pixels();
    let window = |x0: usize, y0: usize| -> Array4<f32> {
        let view = pixels.slice(s![y0..y0 + INSTANCE_SIZE, x0..x0 + INSTANCE_SIZE, ..]);
        view.permuted_axes([2, 0, 1]).mapv(f32::from).insert_axis(Axis(0))
    };
    let fused = |x0: usize, y0: usize| {
        let r = model.score(&exemplar, &window(x0, y0)).unwrap().remove(0);
        fuse(&r.v, r.a.as_ref().unwrap(), &FusionConfig::default()).unwrap()
    };
    let x0 = (gt.center_x - 131.0).clamp(0.0, (360 - INSTANCE_SIZE - 8) as f64) as usize;
    let y0 = (gt.center_y - 127.0).clamp(0.0, (360 - INSTANCE_SIZE - 8) as f64) as usize;
    let base = fused(x0, y0);
    let right = fused(x0 + 8, y0);
    let down = fused(x0, y0 + 8);
    let (r, c, _) = base.argmax();
    assert!((1..16).contains(&r) && (1..16).contains(&c), "peak ({r},{c}) not interior");
    assert_eq!(right.argmax().1, c - 1);
    assert_eq!(right.argmax().0, r);
    assert_eq!(down.argmax().0, r - 1);
    assert_eq!(down.argmax().1, c);
    for i in 0..17 {
        for j in 0..16 {
            let (a, b) = (base.get(i, j + 1), right.get(i, j));
            assert!((a - b).abs() <= 1e-4 * (1.0 + a.abs()), "({i},{j}): {a} vs {b}");
        }
    }
}

#[test]
fn exemplar_is_fixed_and_boxes_stay_in_frame() {
    let seq = &test_set()[2];
    let config = TrackerConfig::default();
    let step_bound = config.scale_step.powi(config.num_scales as i32);
    let mut t = Tracker::init(&trained().model, seq.frame(0).unwrap().as_ref(), seq.ground_truth[0], config).unwrap();
    let exemplar = t.exemplar().clone();
    let mut prev = t.target();
    for i in 1..seq.len() {
        let frame = seq.frame(i).unwrap();
        let (b, _) = t.track_frame(frame.as_ref()).unwrap();
        assert!(b.center_x >= 0.0 && b.center_x <= frame.width() as f64);
        assert!(b.center_y >= 0.0 && b.center_y <= frame.height() as f64);
        assert!(b.width / prev.width <= step_bound && prev.width / b.width <= step_bound);
        prev = b;
    }
    assert_eq!(t.exemplar().v.data(), exemplar.v.data());
    assert_eq!(t.exemplar().a.as_ref().unwrap().data(), exemplar.a.as_ref().unwrap().data());
}

#[test]
fn replay_reproduces_track() {
    let seq = &test_set()[3];
    let run = || {
        let mut t = Tracker::init(&trained().model, seq.frame(0).unwrap().as_ref(), seq.ground_truth[0], TrackerConfig::default()).unwrap();
        (1..seq.len())
            .map(|i| t.track_frame(seq.frame(i).unwrap().as_ref()).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn init_rejects_degenerate_box() {
    let seq = &test_set()[0];
    let bad = TargetState::new(50.0, 50.0, 0.0, 20.0);
    let err = Tracker::init(&desk_model(1), seq.frame(0).unwrap().as_ref(), bad, TrackerConfig::default()).err();
    assert!(matches!(err, Some(Error::Argument(_))), "{err:?}");
}

#[test]
fn init_is_deterministic() {
    let seq = &test_set()[0];
    let model = desk_model(2);
    let a = Tracker::init(&model, seq.frame(0).unwrap().as_ref(), seq.ground_truth[0], TrackerConfig::default()).unwrap();
    let b = Tracker::init(&model, seq.frame(0).unwrap().as_ref(), seq.ground_truth[0], TrackerConfig::default()).unwrap();
    assert_eq!(a.exemplar().v.data(), b.exemplar().v.data());
    assert_eq!(a.exemplar().v.data().dim(), (16, 3, 3));
    assert_eq!(a.exemplar().a.as_ref().unwrap().data().dim(), (16, 5, 5));
}
