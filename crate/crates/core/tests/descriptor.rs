mod common;

use common::{naive_field, naive_levels, noise_video, oracle_gap, sparse_motion_video};
use proptest::prelude::*;
use tneedle::needle::{needle_at_scale, patch_ssd};
use tneedle::pyramid::temporal_downsample;
use tneedle::synth::invert_appearance;
use tneedle::{build_pyramid, describe_video, Location, NeedleParams, Video};

#[test]
fn field_matches_brute_force_on_tiny_video() {
    let v = sparse_motion_video(7, 7, 32, 3);
    let gap = oracle_gap(&v, &NeedleParams::default()).expect("same support");
    assert!(gap <= 1e-9, "gap {gap}");
}

#[test]
fn field_matches_brute_force_on_noise() {
    let v = noise_video(6, 5, 40, 8);
    let gap = oracle_gap(&v, &NeedleParams::default()).expect("same support");
    assert!(gap <= 1e-9, "gap {gap}");
}

#[test]
fn pyramid_matches_direct_convolution() {
    let v = noise_video(4, 3, 37, 1);
    let want = naive_levels(&v, 4);
    let got = build_pyramid(&v, 4).unwrap();
    for (a, b) in got.levels().iter().zip(&want) {
        assert_eq!(a.frame_count(), b.frame_count());
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn impulse_response_of_halving() {
    let v = Video::from_fn(1, 1, 8, 25.0, |_, _, t| if t == 4 { 1.0 } else { 0.0 }).unwrap();
    let h = temporal_downsample(&v).unwrap();
    assert_eq!(h.frame_count(), 4);
    assert!((h.get(0, 0, 2) - 6.0 / 16.0).abs() < 1e-15);
    assert!((h.get(0, 0, 1) - 1.0 / 16.0).abs() < 1e-15);
    // the last output frame is missing one tap, so it is renormalised
    assert!((h.get(0, 0, 3) - 1.0 / 15.0).abs() < 1e-15);
    assert_eq!(h.get(0, 0, 0), 0.0);
}

#[test]
fn level_lengths_halve() {
    let v = Video::filled(2, 2, 100, 25.0, 0.5).unwrap();
    let p = build_pyramid(&v, 3).unwrap();
    let lens: Vec<_> = p.levels().iter().map(Video::frame_count).collect();
    assert_eq!(lens, vec![100, 50, 25]);
    assert!(p.levels()[2]
        .samples()
        .iter()
        .all(|&s| (s - 0.5).abs() < 1e-15));
}

#[test]
fn dot_visible_for_three_frames_gives_paired_pattern() {
    // bright patch at frames 4, 5, 6 on a flat background
    let v = Video::from_fn(
        3,
        3,
        11,
        25.0,
        |_, _, t| if (4..=6).contains(&t) { 0.9 } else { 0.3 },
    )
    .unwrap();
    let d = needle_at_scale(&v, 1, 1, 5, 3, 1).unwrap();
    let a = 9.0 * 0.6f64.powi(2);
    let want = [a, a, 0.0, 0.0, a, a];
    for (x, y) in d.iter().zip(want) {
        assert!((x - y).abs() < 1e-12);
    }
    assert_eq!(patch_ssd(&v, 1, 1, 5, 1, 1).unwrap(), 0.0);
}

fn small_video() -> impl Strategy<Value = Video> {
    (3usize..7, 3usize..7, 28usize..48, any::<u64>())
        .prop_map(|(w, h, f, seed)| sparse_motion_video(w, h, f, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn oracle_equivalence(v in small_video()) {
        let gap = oracle_gap(&v, &NeedleParams::default());
        prop_assert!(gap.is_some_and(|g| g <= 1e-9), "gap {gap:?}");
    }

    #[test]
    fn oracle_equivalence_other_params(v in small_video(), gamma in 1usize..3, scales in 1usize..3) {
        let p = NeedleParams { gamma, scales, ..NeedleParams::default() };
        let gap = oracle_gap(&v, &p);
        prop_assert!(gap.is_some_and(|g| g <= 1e-9), "gap {gap:?}");
    }

    #[test]
    fn descriptors_are_normalized(v in small_video()) {
        let f = describe_video(&v, &NeedleParams::default()).unwrap();
        prop_assert!(f.noise_floor() > 0.0);
        for d in f.descriptors() {
            prop_assert_eq!(d.entries.len(), 18);
            prop_assert!(d.entries.iter().all(|&e| e >= 0.0));
            let s: f64 = d.entries.iter().sum();
            prop_assert!(s <= 1.0 + 1e-9);
            if !d.normalized_by_noise_floor {
                prop_assert!((s - 1.0).abs() <= 1e-9, "sum {s}");
            }
        }
    }

    #[test]
    fn appearance_inversion_is_invisible(v in small_video()) {
        let p = NeedleParams::default();
        let a = describe_video(&v, &p).unwrap();
        let b = describe_video(&invert_appearance(&v), &p).unwrap();
        for (x, y) in a.raw_data().iter().zip(b.raw_data()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn halving_is_linear(a in small_video(), k in -2.0f64..2.0) {
        let b = noise_video(a.width(), a.height(), a.frame_count(), 5);
        let mix = Video::new(a.width(), a.height(), a.frame_count(), 25.0,
            a.samples().iter().zip(b.samples()).map(|(x, y)| (x + k * y) / 4.0 + 0.5).collect());
        // only exercise mixtures that stay inside [0, 1]
        prop_assume!(mix.is_ok());
        let mix = mix.unwrap();
        let (ha, hb, hm) = (temporal_downsample(&a).unwrap(), temporal_downsample(&b).unwrap(), temporal_downsample(&mix).unwrap());
        for i in 0..hm.samples().len() {
            let want = (ha.samples()[i] + k * hb.samples()[i]) / 4.0 + 0.5;
            prop_assert!((hm.samples()[i] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn naive_support_matches_valid_region() {
    let v = sparse_motion_video(8, 6, 45, 2);
    let p = NeedleParams::default();
    let f = describe_video(&v, &p).unwrap();
    let n = naive_field(&v, &p);
    let r = f.region();
    let (t_lo, t_hi) = n
        .locations
        .iter()
        .fold((usize::MAX, 0), |(lo, hi), &(_, _, t)| {
            (lo.min(t), hi.max(t))
        });
    assert_eq!((t_lo, t_hi + 1), (r.t0, r.t1));
    assert_eq!(r.t0, 12);
    assert!(f.entries_at(Location::new(0, 0, 20)).is_none());
}
