mod common;

use ndarray::{Array2, Array3, Array4};
use proptest::prelude::*;
use siampf::confidence::{apce, apcep, ConfidenceHistory};
use siampf::correlation::{fuse, upsample_response, xcorr, FusionConfig};
use siampf::evalbench::{
    iou, precision_metrics, reaggregate, run_benchmark_on, success_metrics, success_threshold, BenchmarkOptions,
    SequenceTracker, PRECISION_STEPS, SUCCESS_STEPS,
};
use siampf::labels_loss::{balance_weights, logistic_loss, logistic_loss_grad, make_label_map, GridPoint};
use siampf::netmodel::{ChannelAttention, ConvLayerSpec as L, Network, NetworkSpec};
use siampf::tracker::{blend, cosine_window, FrameDiagnostics};
use siampf::{FeatureMap, ResponseMap, TargetState};

use common::*;

fn fmap(c: usize, h: usize, w: usize, v: &[f64]) -> FeatureMap<f64> {
    FeatureMap::new(Array3::from_shape_fn((c, h, w), |(i, j, k)| v[(i * h + j) * w + k])).unwrap()
}

fn brute_xcorr(t: &FeatureMap<f64>, x: &FeatureMap<f64>, bias: f64) -> Array2<f64> {
    let (c, th, tw) = t.data().dim();
    let (_, xh, xw) = x.data().dim();
    Array2::from_shape_fn((xh - th + 1, xw - tw + 1), |(u, v)| {
        let mut s = bias;
        for k in 0..c {
            for i in 0..th {
                for j in 0..tw {
                    s += t.data()[[k, i, j]] * x.data()[[k, u + i, v + j]];
                }
            }
        }
        s
    })
}

fn close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
    a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

fn response(size: usize) -> impl Strategy<Value = ResponseMap> {
    prop::collection::vec(-10.0..10.0f64, size * size)
        .prop_map(move |v| ResponseMap::new(Array2::from_shape_vec((size, size), v).unwrap()).unwrap())
}

prop_compose! {
    fn xcorr_case()(c in 1..4usize, th in 1..4usize, tw in 1..4usize, dh in 0..4usize, dw in 0..4usize)
        (t in prop::collection::vec(-2.0..2.0f64, c * th * tw),
         t2 in prop::collection::vec(-2.0..2.0f64, c * th * tw),
         x in prop::collection::vec(-2.0..2.0f64, c * (th + dh) * (tw + dw)),
         c in Just(c), th in Just(th), tw in Just(tw), dh in Just(dh), dw in Just(dw))
        -> (FeatureMap<f64>, FeatureMap<f64>, FeatureMap<f64>)
    {
        (fmap(c, th, tw, &t), fmap(c, th, tw, &t2), fmap(c, th + dh, tw + dw, &x))
    }
}

fn boxes(n: usize) -> impl Strategy<Value = Vec<TargetState>> {
    prop::collection::vec((0.0..200.0f64, 0.0..200.0f64, 1.0..80.0f64, 1.0..80.0f64), n)
        .prop_map(|v| v.into_iter().map(|(x, y, w, h)| TargetState::new(x, y, w, h)).collect())
}

proptest! {
    #[test]
    fn xcorr_matches_brute_force((t, _, x) in xcorr_case(), bias in -3.0..3.0f64) {
        let r = xcorr(&t, &x, bias).unwrap();
        prop_assert!(close(r.values(), &brute_xcorr(&t, &x, bias), 1e-12));
    }

    #[test]
    fn xcorr_is_bilinear((t, t2, x) in xcorr_case(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let mix = FeatureMap::new(t.data() * a + t2.data() * b).unwrap();
        let lhs = xcorr(&mix, &x, 0.0).unwrap();
        let rhs = xcorr(&t, &x, 0.0).unwrap().values() * a + xcorr(&t2, &x, 0.0).unwrap().values() * b;
        prop_assert!(close(lhs.values(), &rhs, 1e-10));
        let scaled_x = FeatureMap::new(x.data() * a).unwrap();
        let lhs = xcorr(&t, &scaled_x, 0.0).unwrap();
        prop_assert!(close(lhs.values(), &(xcorr(&t, &x, 0.0).unwrap().values() * a), 1e-10));
    }

    #[test]
    fn xcorr_bias_is_a_constant_offset((t, _, x) in xcorr_case(), bias in -5.0..5.0f64) {
        let with = xcorr(&t, &x, bias).unwrap();
        let without = xcorr(&t, &x, 0.0).unwrap();
        prop_assert!(close(with.values(), &(without.values() + bias), 1e-12));
    }

    #[test]
    fn fuse_is_a_convex_combination(rv in response(5), ra in response(5), lambda in 0.0..=1.0f64) {
        let cfg = FusionConfig { lambda, ..FusionConfig::default() };
        let f = fuse(&rv, &ra, &cfg).unwrap();
        for ((x, v), a) in f.values().iter().zip(rv.values()).zip(ra.values()) {
            prop_assert!(*x >= v.min(*a) - 1e-12 && *x <= v.max(*a) + 1e-12);
            prop_assert!((x - (lambda * v + (1.0 - lambda) * a)).abs() < 1e-12);
        }
        let same = fuse(&rv, &rv, &cfg).unwrap();
        prop_assert_eq!(same.argmax().0, rv.argmax().0);
        prop_assert_eq!(same.argmax().1, rv.argmax().1);
    }

    #[test]
    fn fuse_rejects_lambda_outside_unit_interval(rv in response(3), lambda in 1.0001..10.0f64) {
        let above = FusionConfig { lambda, ..FusionConfig::default() };
        let below = FusionConfig { lambda: -lambda, ..FusionConfig::default() };
        prop_assert!(fuse(&rv, &rv, &above).is_err());
        prop_assert!(fuse(&rv, &rv, &below).is_err());
    }

    #[test]
    fn upsampling_keeps_constants(size in 1..9usize, extra in 0..40usize, value in -100.0..100.0f64) {
        let up = upsample_response(&ResponseMap::filled(size, value), size + extra).unwrap();
        prop_assert_eq!(up.height(), size + extra);
        for v in up.values() {
            prop_assert!((v - value).abs() < 1e-9 * (1.0 + value.abs()));
        }
    }

    #[test]
    fn labels_grow_with_radius_and_shrink_with_stride(
        size in 3..21usize, r in 0.0..40.0f64, dr in 0.0..20.0f64, k in 1..12usize,
        fr in 0.0..=1.0f64, fc in 0.0..=1.0f64,
    ) {
        let c = GridPoint::new(fr * (size - 1) as f64, fc * (size - 1) as f64);
        let base = make_label_map(size, k, r, c).unwrap();
        let wider = make_label_map(size, k, r + dr, c).unwrap();
        let coarser = make_label_map(size, k + 1, r, c).unwrap();
        for ((b, w), s) in base.values().iter().zip(wider.values()).zip(coarser.values()) {
            prop_assert!(*w >= *b);
            prop_assert!(*s <= *b);
        }
        let w = balance_weights(&base);
        prop_assert!((w.values().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_as_scores_agree_with_labels(
        size in 3..12usize, r in 4.0..30.0f64, mag in 0.0..5.0f64, step in 0.01..2.0f64,
    ) {
        let labels = make_label_map(size, 8, r, GridPoint::center_of(size)).unwrap();
        let w = balance_weights(&labels);
        let scaled = |m: f64| ResponseMap::new(labels.values().mapv(|y| m * f64::from(y))).unwrap();
        let a = logistic_loss(&scaled(mag), &labels, &w).unwrap();
        let b = logistic_loss(&scaled(mag + step), &labels, &w).unwrap();
        prop_assert!(b < a, "{} !< {}", b, a);
    }

    #[test]
    fn loss_gradient_matches_finite_differences(size in 2..7usize, v in prop::collection::vec(-4.0..4.0f64, 49), r in 0.0..20.0f64) {
        let labels = make_label_map(size, 8, r, GridPoint::center_of(size)).unwrap();
        let w = balance_weights(&labels);
        let base = Array2::from_shape_fn((size, size), |(i, j)| v[i * 7 + j]);
        let g = logistic_loss_grad(&ResponseMap::new(base.clone()).unwrap(), &labels, &w).unwrap();
        let h = 1e-6;
        for i in 0..size {
            for j in 0..size {
                let mut p = base.clone();
                let mut m = base.clone();
                p[[i, j]] += h;
                m[[i, j]] -= h;
                let fd = (logistic_loss(&ResponseMap::new(p).unwrap(), &labels, &w).unwrap()
                    - logistic_loss(&ResponseMap::new(m).unwrap(), &labels, &w).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[[i, j]]).abs() < 1e-5, "({},{}) {} vs {}", i, j, fd, g[[i, j]]);
            }
        }
    }

    #[test]
    fn apce_is_shift_and_scale_invariant(map in response(6), shift in -50.0..50.0f64, scale in 0.01..100.0f64) {
        let a = apce(&map).unwrap();
        let moved = ResponseMap::new(map.values().mapv(|v| scale * v + shift)).unwrap();
        let b = apce(&moved).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * (1.0 + a));
        prop_assert!(a >= 0.0 && apcep(&map).unwrap() >= 0.0);
    }

    #[test]
    fn constant_maps_score_zero(size in 1..10usize, value in -100.0..100.0f64) {
        let m = ResponseMap::filled(size, value);
        prop_assert_eq!(apce(&m).unwrap(), 0.0);
        prop_assert_eq!(apcep(&m).unwrap(), 0.0);
    }

    #[test]
    fn attention_is_a_positive_diagonal_scaling(seed in 0..1000u64, v in prop::collection::vec(-3.0..3.0f64, 8 * 3 * 3)) {
        let att = ChannelAttention::<f64>::random(8, 4, &mut rng(seed)).unwrap();
        let feat = fmap(8, 3, 3, &v);
        let w = att.channel_weights(&feat).unwrap();
        let out = att.apply(&feat).unwrap();
        for c in 0..8 {
            prop_assert!(w[c] > 0.0);
            for i in 0..3 {
                for j in 0..3 {
                    let (a, b) = (out.data()[[c, i, j]], w[c] * feat.data()[[c, i, j]]);
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
        let single = fmap(1, 3, 3, &v[..9]);
        let att1 = ChannelAttention::<f64>::random(1, 1, &mut rng(seed)).unwrap();
        let scaled = att1.apply(&single).unwrap();
        let argmax = |f: &FeatureMap<f64>| {
            f.data().iter().enumerate().fold((0, f64::MIN), |b, (i, v)| if *v > b.1 { (i, *v) } else { b }).0
        };
        prop_assert_eq!(argmax(&scaled), argmax(&single));
    }

    #[test]
    fn blend_endpoints(map in response(7), influence in 0.0..=1.0f64) {
        let win = cosine_window(7);
        prop_assert!((win.values().sum() - 1.0).abs() < 1e-12);
        prop_assert_eq!(blend(&map, &win, 0.0).unwrap().into_values(), map.values().clone());
        prop_assert_eq!(blend(&map, &win, 1.0).unwrap().into_values(), win.values().clone());
        let mid = blend(&map, &win, influence).unwrap();
        for ((m, a), b) in mid.values().iter().zip(map.values()).zip(win.values()) {
            prop_assert!(*m >= a.min(*b) - 1e-12 && *m <= a.max(*b) + 1e-12);
        }
    }

    #[test]
    fn history_mean_is_the_window_mean(
        capacity in 1..40usize, warmup in 0..5usize, values in prop::collection::vec(0.0..100.0f64, 1..120), ratio in 0.01..=1.0f64,
    ) {
        let mut h = ConfidenceHistory::new(capacity, warmup);
        for (i, v) in values.iter().enumerate() {
            let mean_before = h.running_mean();
            let filled = h.len();
            let ok = h.gate(*v, ratio);
            prop_assert_eq!(ok, filled < warmup || *v >= ratio * mean_before);
            let start = (i + 1).saturating_sub(capacity);
            let window = &values[start..=i];
            prop_assert_eq!(h.len(), window.len());
            let expect = window.iter().sum::<f64>() / window.len() as f64;
            prop_assert!((h.running_mean() - expect).abs() < 1e-9 * (1.0 + expect));
        }
    }

    #[test]
    fn metric_curves_match_brute_force(pair in (1..30usize).prop_flat_map(|n| (boxes(n), boxes(n)))) {
        let (pred, gt) = pair;
        let (s, auc) = success_metrics(&pred, &gt).unwrap();
        let (p, p20) = precision_metrics(&pred, &gt).unwrap();
        prop_assert_eq!(s.len(), SUCCESS_STEPS);
        prop_assert_eq!(p.len(), PRECISION_STEPS);
        prop_assert!(s.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(p.windows(2).all(|w| w[1] >= w[0]));
        let n = pred.len() as f64;
        for (i, v) in s.iter().enumerate() {
            let t = success_threshold(i);
            let count = pred.iter().zip(&gt).filter(|(a, b)| brute_iou(a, b) > t).count();
            prop_assert!((v - count as f64 / n).abs() < 1e-12 || near_threshold(&pred, &gt, t));
        }
        for (d, v) in p.iter().enumerate() {
            let count = pred.iter().zip(&gt)
                .filter(|(a, b)| ((a.center_x - b.center_x).powi(2) + (a.center_y - b.center_y).powi(2)).sqrt() <= d as f64)
                .count();
            prop_assert!((v - count as f64 / n).abs() < 1e-12);
        }
        prop_assert!((auc - s.iter().sum::<f64>() / SUCCESS_STEPS as f64).abs() < 1e-12);
        prop_assert_eq!(p20, p[20]);
        for (a, b) in pred.iter().zip(&gt) {
            prop_assert!((iou(a, b) - brute_iou(a, b)).abs() < 1e-9);
            prop_assert!((iou(a, b) - iou(b, a)).abs() < 1e-12);
        }
    }
}

/// Overlap of corner intervals.
fn brute_iou(a: &TargetState, b: &TargetState) -> f64 {
    let (ax0, ax1) = (a.center_x - a.width / 2.0, a.center_x + a.width / 2.0);
    let (ay0, ay1) = (a.center_y - a.height / 2.0, a.center_y + a.height / 2.0);
    let (bx0, bx1) = (b.center_x - b.width / 2.0, b.center_x + b.width / 2.0);
    let (by0, by1) = (b.center_y - b.height / 2.0, b.center_y + b.height / 2.0);
    let ix = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let iy = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = ix * iy;
    inter / (a.width * a.height + b.width * b.height - inter)
}

fn near_threshold(pred: &[TargetState], gt: &[TargetState], t: f64) -> bool {
    pred.iter().zip(gt).any(|(a, b)| (brute_iou(a, b) - t).abs() < 1e-9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_shapes_follow_valid_window_arithmetic(
        side in 8..48usize, k1 in 1..4usize, k2 in 1..4usize, pool in 1..4usize, stride in 1..3usize, seed in 0..100u64,
    ) {
        let spec = NetworkSpec {
            name: "probe".into(),
            layers: vec![L::conv(k1, 3, 2, 1), L::maxpool(pool, stride), L::conv(k2, 2, 3, 1).without_post()],
            tap_index: Some(1),
        };
        let net = Network::<f64>::random(spec.clone(), &mut rng(seed)).unwrap();
        let a = side - k1 + 1;
        let b = (a - pool) / stride + 1;
        let expect = b.checked_sub(k2).map(|v| v + 1);
        prop_assert_eq!(spec.output_size(side), expect);
        if let Some(out) = expect {
            let x = Array4::<f64>::ones((1, 3, side, side));
            let y = net.forward(&x).unwrap();
            prop_assert_eq!(y.output.dim(), (1, 3, out, out));
            prop_assert_eq!(y.tap.unwrap().dim(), (1, 2, b, b));
        }
    }

    #[test]
    fn reaggregation_reproduces_the_report(seed in 0..1000u64) {
        struct Jitter(u64);
        impl SequenceTracker for Jitter {
            fn name(&self) -> String {
                "jitter".into()
            }
            fn run(&self, s: &siampf::evalbench::TrackSequence) -> siampf::Result<(Vec<TargetState>, Vec<FrameDiagnostics>)> {
                use rand::Rng;
                let mut r = rng(self.0 ^ s.len() as u64);
                let boxes = s.ground_truth.iter().map(|b| TargetState::new(
                    b.center_x + r.random_range(-15.0..15.0), b.center_y + r.random_range(-15.0..15.0),
                    b.width * r.random_range(0.7..1.3), b.height * r.random_range(0.7..1.3),
                )).collect();
                Ok((boxes, Vec::new()))
            }
        }
        let cfg = siampf::synthetic::SyntheticConfig { frames: 12, ..Default::default() };
        let seqs = siampf::synthetic::generate_dataset(&cfg, "p", 3, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let opts = BenchmarkOptions { output_dir: Some(dir.path().to_path_buf()), ..Default::default() };
        let report = run_benchmark_on(&Jitter(seed), &named(seqs.clone()), &opts).unwrap();
        let again = reaggregate(dir.path(), &seqs, "jitter").unwrap();
        prop_assert!((report.mean_auc - again.mean_auc).abs() < 1e-12);
        prop_assert!((report.mean_precision_at_20 - again.mean_precision_at_20).abs() < 1e-12);
        prop_assert!((report.mean_iou - again.mean_iou).abs() < 1e-9);
    }
}
