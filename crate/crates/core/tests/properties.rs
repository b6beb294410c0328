use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use swd_core::augment::{apply_pipeline, apply_pipeline_traced, AugmentConfig};
use swd_core::autodiff::{Graph, Tensor};
use swd_core::events::{mask_to_events, pointwise_from_slices};
use swd_core::preprocess::{minmax_scale, resample, ResampleSpec};
use swd_core::signal_io::{events_to_mask, load_labels, save_labels, BinaryMask, EventSet, Interval, Recording};
use swd_core::states::{detect_noise, merge_close, NoiseParams};
use swd_core::training::{lr_at, split_segments, EarlyStopping, TrainConfig};

/// Disjoint intervals on a 0.01 s grid inside `[0, 100)`.
fn event_set() -> impl Strategy<Value = EventSet> {
    prop::collection::vec((1u32..400, 1u32..300), 0..20).prop_map(|steps| {
        let mut t = 0u32;
        let mut ivs = Vec::new();
        for (gap, len) in steps {
            let (s, e) = (t + gap, t + gap + len);
            if e > 10_000 {
                break;
            }
            ivs.push(Interval::new(f64::from(s) / 100.0, f64::from(e) / 100.0, "SWD"));
            t = e;
        }
        EventSet::new(ivs, 100.0).unwrap()
    })
}

fn signal(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labels_round_trip(events in event_set()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        save_labels(&events, &path).unwrap();
        let back = load_labels(&path).unwrap();
        prop_assert_eq!(back.intervals, events.intervals);
    }

    #[test]
    fn mask_to_events_inverts_rasterization(events in event_set()) {
        let rate = 100.0;
        let mask = events_to_mask(&events, 10_000, rate);
        let back = mask_to_events(&mask, 0.0, 0.0);
        prop_assert_eq!(back.len(), events.len());
        for (a, b) in back.iter().zip(events.iter()) {
            prop_assert!((a.start_s - b.start_s).abs() <= 1.0 / rate + 1e-9);
            prop_assert!((a.end_s - b.end_s).abs() <= 1.0 / rate + 1e-9);
        }
    }

    #[test]
    fn pointwise_f1_ignores_sample_order(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..200), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (pred, truth): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (p2, t2): (Vec<u8>, Vec<u8>) = shuffled.into_iter().unzip();
        let a = pointwise_from_slices(&pred, &truth).unwrap();
        let b = pointwise_from_slices(&p2, &t2).unwrap();
        prop_assert_eq!(a.f1.to_bits(), b.f1.to_bits());
    }

    #[test]
    fn filtering_after_merging_is_stable(mask in prop::collection::vec(0u8..2, 1..600), min_dur in 0.0f64..0.5, gap in 0.0f64..0.3) {
        let mask = BinaryMask { values: mask, sample_rate_hz: 100.0 };
        let once = mask_to_events(&mask, min_dur, gap);
        let again = mask_to_events(&events_to_mask(&once, mask.len(), 100.0), min_dur, gap);
        prop_assert_eq!(again.intervals, once.intervals);
    }

    #[test]
    fn merging_is_idempotent(raw in prop::collection::vec((0.0f64..500.0, 0.1f64..30.0), 0..30), gap in 0.0f64..25.0) {
        let ivs: Vec<(f64, f64)> = raw.into_iter().map(|(s, d)| (s, s + d)).collect();
        let once = merge_close(ivs, gap);
        prop_assert_eq!(merge_close(once.clone(), gap), once);
    }

    #[test]
    fn resampling_is_linear(x in signal(800..1200), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let y: Vec<f64> = x.iter().rev().map(|v| v * 0.5 + 1.0).collect();
        let spec = ResampleSpec::new(400.0, 100.0);
        let rs = |v: Vec<f64>| resample(&Recording::new(v, 400.0, "p").unwrap(), &spec).unwrap().samples;
        let mix = rs(x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect());
        let (rx, ry) = (rs(x.clone()), rs(y));
        let scale = mix.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for ((m, p), q) in mix.iter().zip(&rx).zip(&ry) {
            prop_assert!((m - (a * p + b * q)).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn band_limited_energy_survives_resampling(f in 0.5f64..40.0, phase in 0.0f64..std::f64::consts::TAU, amp in 0.1f64..10.0) {
        let n = 4000;
        let x: Vec<f64> = (0..n).map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / 400.0 + phase).sin()).collect();
        let out = resample(&Recording::new(x.clone(), 400.0, "e").unwrap(), &ResampleSpec::new(400.0, 100.0)).unwrap();
        // Interior only, clear of the kernel's edge taper.
        let mean_sq = |v: &[f64]| v.iter().map(|s| s * s).sum::<f64>() / v.len() as f64;
        let e_in = mean_sq(&x[400..n - 400]);
        let e_out = mean_sq(&out.samples[100..out.len() - 100]);
        prop_assert!((e_out / e_in - 1.0).abs() <= 0.02, "ratio {}", e_out / e_in);
    }

    #[test]
    fn minmax_is_idempotent(x in signal(2..300)) {
        prop_assume!(x.iter().any(|v| *v != x[0]));
        let once = minmax_scale(&Recording::new(x, 100.0, "m").unwrap());
        let twice = minmax_scale(&once);
        for (a, b) in once.samples.iter().zip(&twice.samples) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn augmentation_without_noise_is_a_signed_rescale(x in prop::collection::vec(-1.0f32..1.0, 1..200), seed in any::<u64>()) {
        let cfg = AugmentConfig { p_noise: 0.0, p_scale: 0.7, p_invert: 0.4, ..AugmentConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out, applied) = apply_pipeline_traced(&x, &cfg, &mut rng);
        prop_assert_eq!(out.len(), x.len());
        let alpha = applied.scale.unwrap_or(1.0);
        prop_assert!(alpha == 1.0 || (cfg.scale_range.0..=cfg.scale_range.1).contains(&alpha));
        let sign = if applied.inverted { -1.0 } else { 1.0 };
        for (o, v) in out.iter().zip(&x) {
            prop_assert_eq!(*o, (sign * ((*v as f64 * alpha) as f32) as f64) as f32);
        }
    }

    #[test]
    fn augmentation_is_seeded(x in prop::collection::vec(-1.0f32..1.0, 1..200), seed in any::<u64>()) {
        let cfg = AugmentConfig::default();
        let a = apply_pipeline(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = apply_pipeline(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a.len(), x.len());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn noise_blocks_survive_affine_maps(
        x in prop::collection::vec(-1.0f64..1.0, 2000..3000),
        spikes in prop::collection::vec((0usize..2000, prop::bool::ANY), 0..4),
        a in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        b in -1e3f64..1e3,
    ) {
        let mut x = x;
        for (i, up) in spikes {
            x[i] = if up { 400.0 } else { -400.0 };
        }
        let params = NoiseParams::default();
        let base = detect_noise(&Recording::new(x.clone(), 100.0, "n").unwrap(), &params).unwrap();
        let mapped: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let moved = detect_noise(&Recording::new(mapped, 100.0, "n").unwrap(), &params).unwrap();
        prop_assert_eq!(moved.intervals.intervals, base.intervals.intervals);
    }

    #[test]
    fn best_epoch_is_never_beaten_earlier(losses in prop::collection::vec(0.0f64..1.0, 1..40), patience in 1usize..6) {
        let mut stop = EarlyStopping::new(patience);
        let mut seen = Vec::new();
        for (i, &l) in losses.iter().enumerate() {
            seen.push(l);
            let d = stop.observe(i + 1, l);
            let (_, best) = stop.best().unwrap();
            prop_assert!(seen.iter().all(|&s| s >= best));
            if d.stop {
                break;
            }
        }
    }

    #[test]
    fn split_covers_every_segment_once(n in 2usize..500, seed in any::<u64>()) {
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let s = split_segments(n, &cfg).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_segments(n, &cfg).unwrap(), s);
    }

    #[test]
    fn backward_is_bit_reproducible(seed in any::<u64>()) {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |shape: [usize; 3]| {
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>()).unwrap()
        };
        let (x, w) = (t([2, 3, 16]), t([4, 3, 5]));
        let grads = || {
            let mut g = Graph::new();
            let (xv, wv) = (g.param(x.clone()), g.param(w.clone()));
            let c = g.conv1d(xv, wv, None).unwrap();
            let r = g.relu(c);
            let p = g.maxpool2(r).unwrap();
            let s = g.sigmoid(p);
            let target = Tensor::zeros(g.value(s).shape());
            let loss = g.dice_loss(s, &target, 1.0).unwrap();
            let gr = g.backward(loss);
            (gr.get(xv).unwrap().data().to_vec(), gr.get(wv).unwrap().data().to_vec())
        };
        let (a, b) = (grads(), grads());
        prop_assert!(a.0.iter().zip(&b.0).chain(a.1.iter().zip(&b.1)).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn warmup_meets_cosine_at_the_peak() {
    let cfg = TrainConfig::default();
    let w = cfg.warmup_steps;
    assert!((lr_at(w, &cfg) - cfg.lr_max).abs() < 1e-15);
    assert!((lr_at(w + 1, &cfg) - cfg.lr_max).abs() < 1e-8);
    assert!((lr_at(w - 1, &cfg) - cfg.lr_max).abs() < 1e-5);
}
