use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pmbm_core::metrics::AnnotatedObject;
use pmbm_core::{evaluate_per_class, evaluate_sequence, AnnotatedFrame, MotSummary};

fn obj(id: u64, x: f64, y: f64, class: &str) -> AnnotatedObject<f64> {
    AnnotatedObject {
        id,
        position: [x, y],
        class: class.into(),
    }
}

/// Ground truth of a few walkers and a noisy tracker with dropouts, clutter
/// and occasional identity swaps.
fn random_pair(seed: u64, class: &str) -> (Vec<AnnotatedFrame<f64>>, Vec<AnnotatedFrame<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_obj = rng.random_range(0..5);
    let n_frames = rng.random_range(1..25);
    let starts: Vec<[f64; 2]> = (0..n_obj)
        .map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)])
        .collect();
    let vel: Vec<[f64; 2]> = (0..n_obj)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let mut gt = Vec::new();
    let mut tr = Vec::new();
    for f in 0..n_frames {
        let mut g = Vec::new();
        let mut t = Vec::new();
        for i in 0..n_obj {
            let p = [
                starts[i][0] + vel[i][0] * f as f64,
                starts[i][1] + vel[i][1] * f as f64,
            ];
            g.push(obj(i as u64, p[0], p[1], class));
            if rng.random_bool(0.85) {
                let swap = if rng.random_bool(0.05) { 100 } else { 0 };
                t.push(obj(
                    i as u64 + 10 + swap,
                    p[0] + rng.random_range(-1.5..1.5),
                    p[1] + rng.random_range(-1.5..1.5),
                    class,
                ));
            }
        }
        for c in 0..rng.random_range(0..3) {
            t.push(obj(
                500 + c,
                rng.random_range(-40.0..40.0),
                rng.random_range(-40.0..40.0),
                class,
            ));
        }
        gt.push(AnnotatedFrame::new(f as u64, g));
        tr.push(AnnotatedFrame::new(f as u64, t));
    }
    (gt, tr)
}

fn assert_identity(s: &MotSummary<f64>) {
    match s.mota {
        Some(m) => {
            let expect =
                1.0 - (s.false_positives + s.misses + s.id_switches) as f64 / s.gt_count as f64;
            assert_eq!(m, expect);
        }
        None => assert_eq!(s.gt_count, 0),
    }
    assert_eq!(s.matches + s.misses, s.gt_count);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mota_identity(seed in any::<u64>()) {
        let (gt, tr) = random_pair(seed, "vehicle");
        assert_identity(&evaluate_sequence(&gt, &tr, 2.0).unwrap());
    }

    #[test]
    fn relabelling_tracks_changes_nothing(seed in any::<u64>(), offset in 1u64..1000) {
        let (gt, tr) = random_pair(seed, "vehicle");
        let relabelled: Vec<_> = tr
            .iter()
            .map(|f| {
                let mut f = f.clone();
                for o in &mut f.objects {
                    // order-reversing bijection on ids
                    o.id = 1_000_000 + offset - o.id;
                }
                f
            })
            .collect();
        prop_assert_eq!(
            evaluate_sequence(&gt, &tr, 2.0).unwrap(),
            evaluate_sequence(&gt, &relabelled, 2.0).unwrap()
        );
    }

    #[test]
    fn spurious_tracks_only_add_false_positives(seed in any::<u64>()) {
        let (gt, tr) = random_pair(seed, "vehicle");
        let base = evaluate_sequence(&gt, &tr, 2.0).unwrap();
        let noisy: Vec<_> = tr
            .iter()
            .map(|f| {
                let mut f = f.clone();
                f.objects.push(obj(9999, 1e4, 1e4, "vehicle"));
                f
            })
            .collect();
        let s = evaluate_sequence(&gt, &noisy, 2.0).unwrap();
        prop_assert_eq!(s.false_positives, base.false_positives + gt.len() as u64);
        prop_assert_eq!(
            (s.misses, s.id_switches, s.fragmentations, s.matches, s.gt_count),
            (base.misses, base.id_switches, base.fragmentations, base.matches, base.gt_count)
        );
        prop_assert_eq!(s.motp, base.motp);
    }

    #[test]
    fn order_within_frame_is_irrelevant(seed in any::<u64>()) {
        let (gt, tr) = random_pair(seed, "vehicle");
        let rev = |fs: &[AnnotatedFrame<f64>]| -> Vec<AnnotatedFrame<f64>> {
            fs.iter()
                .map(|f| AnnotatedFrame::new(f.frame, f.objects.iter().rev().cloned().collect()))
                .collect()
        };
        let a = evaluate_sequence(&gt, &tr, 2.0).unwrap();
        let b = evaluate_sequence(&rev(&gt), &rev(&tr), 2.0).unwrap();
        prop_assert_eq!(a.mota, b.mota);
        prop_assert_eq!(
            (a.false_positives, a.misses, a.id_switches, a.fragmentations, a.matches),
            (b.false_positives, b.misses, b.id_switches, b.fragmentations, b.matches)
        );
        prop_assert!((a.motp - b.motp).abs() <= 1e-12);
    }

    #[test]
    fn per_class_equals_separate_runs(seed in any::<u64>()) {
        let (gv, tv) = random_pair(seed, "vehicle");
        let (gp, tp) = random_pair(seed ^ 0x5555, "pedestrian");
        let n = gv.len().max(gp.len());
        let merge = |a: &[AnnotatedFrame<f64>], b: &[AnnotatedFrame<f64>]| -> Vec<AnnotatedFrame<f64>> {
            (0..n)
                .map(|f| {
                    let mut objs: Vec<_> = a.get(f).map(|x| x.objects.clone()).unwrap_or_default();
                    objs.extend(b.get(f).map(|x| x.objects.clone()).unwrap_or_default());
                    AnnotatedFrame::new(f as u64, objs)
                })
                .collect()
        };
        let pad = |a: &[AnnotatedFrame<f64>]| merge(a, &[]);
        let radii = BTreeMap::from([("vehicle".to_string(), 2.0), ("pedestrian".to_string(), 1.0)]);
        let all = evaluate_per_class(&merge(&gv, &gp), &merge(&tv, &tp), &radii).unwrap();
        let v = evaluate_sequence(&pad(&gv), &pad(&tv), 2.0).unwrap();
        let pad_p = |a: &[AnnotatedFrame<f64>]| merge(&[], a);
        let p = evaluate_sequence(&pad_p(&gp), &pad_p(&tp), 1.0).unwrap();
        if v.gt_count + v.false_positives > 0 {
            prop_assert_eq!(&all["vehicle"], &v);
        }
        if p.gt_count + p.false_positives > 0 {
            prop_assert_eq!(&all["pedestrian"], &p);
        }
    }
}

#[test]
fn hand_built_sequence_matches_formula() {
    let gt: Vec<_> = (0..10)
        .map(|f| AnnotatedFrame::new(f, vec![obj(1, f as f64, 0.0, "vehicle")]))
        .collect();
    let tr: Vec<_> = (0..10)
        .map(|f| {
            let objs = match f {
                4 | 5 => vec![],
                7 => vec![
                    obj(5, f as f64, 0.1, "vehicle"),
                    obj(6, 50.0, 50.0, "vehicle"),
                ],
                _ => vec![obj(5, f as f64, 0.1, "vehicle")],
            };
            AnnotatedFrame::new(f, objs)
        })
        .collect();
    let s = evaluate_sequence(&gt, &tr, 2.0).unwrap();
    assert!((s.mota.unwrap() - 0.7).abs() < 1e-12);
    assert_eq!(s.fragmentations, 1);
}
