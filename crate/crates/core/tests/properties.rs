mod common;

use aquanet::mask::IndexMask;
use aquanet::metrics::{weighted_prf, ConfusionMatrix};
use aquanet::tensor::Tensor;
use aquanet::training::{poly_lr, total_loss};
use common::*;
use proptest::prelude::*;

/// `(k, pred, gt)` with `gt` holding some ignore pixels and at least one labelled one.
fn mask_pair() -> impl Strategy<Value = (usize, IndexMask, IndexMask)> {
    (2usize..=6, 1usize..=8, 1usize..=8).prop_flat_map(|(k, h, w)| {
        let n = h * w;
        (
            Just(k),
            proptest::collection::vec(0..k as u8, n),
            proptest::collection::vec(prop_oneof![4 => 0..k as u8, 1 => Just(IGNORE)], n),
            0..n,
        )
            .prop_map(move |(k, p, mut g, anchor)| {
                if g[anchor] == IGNORE {
                    g[anchor] = 0;
                }
                (k, IndexMask::new(h, w, p).unwrap(), IndexMask::new(h, w, g).unwrap())
            })
    })
}

fn cm(k: usize, pairs: &[(&IndexMask, &IndexMask)]) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::new(k);
    for (p, g) in pairs {
        m.accumulate(p, g, IGNORE).unwrap();
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn scores_are_bounded_and_counts_add_up((k, p, g) in mask_pair()) {
        let m = cm(k, &[(&p, &g)]);
        let acc = m.pixel_acc(None).unwrap();
        let miou = m.miou(None).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert!((0.0..=1.0).contains(&miou));
        prop_assert_eq!(m.counted_pixels() + m.ignored_pixels(), (p.height() * p.width()) as u64);
        prop_assert!(miou <= 1.0 && m.trace() <= m.counted_pixels());
    }

    #[test]
    fn perfect_prediction_scores_one((k, _p, g) in mask_pair()) {
        let pred = IndexMask::from_fn(g.height(), g.width(), |y, x| if g.get(y, x) == IGNORE { 0 } else { g.get(y, x) });
        let m = cm(k, &[(&pred, &g)]);
        prop_assert_eq!(m.pixel_acc(None).unwrap(), 1.0);
        // Classes only predicted on ignored pixels have no union.
        prop_assert_eq!(m.miou(None).unwrap(), 1.0);
    }

    #[test]
    fn merge_equals_joint_accumulation(a in mask_pair(), b in mask_pair()) {
        let k = a.0.max(b.0);
        let mut left = cm(k, &[(&a.1, &a.2)]);
        left.merge(&cm(k, &[(&b.1, &b.2)])).unwrap();
        let joint = cm(k, &[(&a.1, &a.2), (&b.1, &b.2)]);
        prop_assert_eq!(left, joint);
    }

    #[test]
    fn relabelling_classes_keeps_scores((k, p, g) in mask_pair(), shift in 1usize..6) {
        let perm = |v: u8| if v == IGNORE { v } else { ((v as usize + shift) % k) as u8 };
        let relabel = |m: &IndexMask| IndexMask::from_fn(m.height(), m.width(), |y, x| perm(m.get(y, x)));
        let a = cm(k, &[(&p, &g)]);
        let b = cm(k, &[(&relabel(&p), &relabel(&g))]);
        prop_assert_eq!(a.pixel_acc(None).unwrap(), b.pixel_acc(None).unwrap());
        prop_assert!((a.miou(None).unwrap() - b.miou(None).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn swapping_roles_keeps_accuracy_and_iou((k, p, g) in mask_pair()) {
        // Restrict to labelled pixels so both masks are valid ground truth.
        let pred = IndexMask::from_fn(p.height(), p.width(), |y, x| if g.get(y, x) == IGNORE { IGNORE } else { p.get(y, x) });
        let a = cm(k, &[(&pred, &g)]);
        let b = cm(k, &[(&g, &pred)]);
        prop_assert_eq!(a.pixel_acc(None).unwrap(), b.pixel_acc(None).unwrap());
        prop_assert_eq!(a.per_class_iou(), b.per_class_iou());
    }

    #[test]
    fn weighted_recall_is_accuracy((k, p, g) in mask_pair()) {
        let (mut t, mut q) = (Vec::new(), Vec::new());
        for (&a, &b) in p.data().iter().zip(g.data()) {
            if b != IGNORE {
                t.push(b as usize);
                q.push(a as usize);
            }
        }
        let w = weighted_prf(&t, &q, k).unwrap();
        let acc = cm(k, &[(&p, &g)]).pixel_acc(None).unwrap();
        prop_assert!((w.recall - acc).abs() < 1e-12);
        prop_assert!(w.f1 <= 1.0 && w.precision <= 1.0);
    }

    #[test]
    fn loss_is_shift_invariant_and_nonnegative(seed in any::<u64>(), shift in -50.0f64..50.0, k in 2usize..5) {
        let mut r = rng(seed);
        let main = random_tensor(&mut r, &[k, 4, 4], 3.0);
        let aux = random_tensor(&mut r, &[k, 2, 2], 3.0);
        let mut mask = random_mask(&mut r, 4, 4, k as u8, 0.3);
        mask.set(0, 0, 0);
        let a = total_loss(&main, &aux, &mask, IGNORE, 0.4).unwrap();
        let b = total_loss(&main.map(|v| v + shift), &aux.map(|v| v + shift), &mask, IGNORE, 0.4).unwrap();
        prop_assert!(a.main >= 0.0 && a.aux >= 0.0);
        prop_assert!((a.total - b.total).abs() < 1e-9);
        prop_assert!((a.total - (a.main + 0.4 * a.aux)).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_cost_log_k(k in 2usize..8, h in 1usize..5, w in 1usize..5) {
        let z = Tensor::zeros(&[k, h, w]);
        let mask = IndexMask::filled(h, w, (k - 1) as u8);
        let l = total_loss(&z, &z, &mask, IGNORE, 0.0).unwrap();
        prop_assert!((l.main - (k as f64).ln()).abs() < 1e-12);
        prop_assert_eq!(l.total, l.main);
    }

    #[test]
    fn poly_lr_is_monotone_and_scales(base in 1e-6f64..1.0, max in 1usize..100_000, a in 0.0f64..1.0, b in 0.0f64..1.0, power in 0.1f64..3.0) {
        let (i, j) = ((a * max as f64) as usize, (b * max as f64) as usize);
        let (lo, hi) = (i.min(j), i.max(j));
        let (x, y) = (poly_lr(base, lo, max, power), poly_lr(base, hi, max, power));
        prop_assert!(x >= y);
        prop_assert!(x <= base && y >= 0.0);
        prop_assert!((poly_lr(3.0 * base, lo, max, power) - 3.0 * x).abs() <= 1e-12 * base.max(1.0));
    }
}
