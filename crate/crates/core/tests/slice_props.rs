//! Slice algebra against explicit point enumeration.

use std::collections::BTreeSet;

use proptest::prelude::*;
use protoloc::slices::{AxisWindow, HyperRect, IntervalSlice, SliceSet};

fn rect_strategy() -> impl Strategy<Value = HyperRect> {
    prop::collection::vec((0usize..10, 0usize..4), 3)
        .prop_map(|v| HyperRect::from_bounds(&v.iter().map(|&(lo, len)| (lo, lo + len)).collect::<Vec<_>>()))
}

fn set_strategy() -> impl Strategy<Value = SliceSet> {
    prop::collection::vec(rect_strategy(), 0..12).prop_map(|r| SliceSet::from_rects(r).unwrap())
}

fn points(s: &SliceSet) -> BTreeSet<Vec<usize>> {
    s.points().into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn merge_keeps_coverage_and_is_idempotent(s in set_strategy()) {
        let m = s.merge().unwrap();
        prop_assert_eq!(points(&m), points(&s));
        prop_assert_eq!(m.merge().unwrap(), m.clone());
        prop_assert!(m.rects().len() <= s.rects().len().max(1));
        for (a, ra) in m.rects().iter().enumerate() {
            for (b, rb) in m.rects().iter().enumerate() {
                prop_assert!(a == b || !ra.contains_rect(rb));
            }
        }
    }

    #[test]
    fn union_area_counts_points(s in set_strategy()) {
        prop_assert_eq!(s.union_area(), points(&s).len() as u64);
        prop_assert_eq!(s.merge().unwrap().union_area(), points(&s).len() as u64);
    }

    #[test]
    fn union_is_monotone_and_subadditive(a in set_strategy(), b in set_strategy()) {
        let u = a.union(&b).unwrap();
        let (na, nb, nu) = (a.union_area(), b.union_area(), u.union_area());
        prop_assert!(na <= nu && nb <= nu && nu <= na + nb);
        let expected: BTreeSet<_> = points(&a).union(&points(&b)).cloned().collect();
        prop_assert_eq!(points(&u), expected);
    }

    #[test]
    fn union_ignores_operand_order(sets in prop::collection::vec(set_strategy(), 1..6), rot in 0usize..6) {
        let fwd = SliceSet::union_all(sets.iter()).unwrap();
        let mut shuffled = sets.clone();
        shuffled.rotate_left(rot % sets.len());
        shuffled.reverse();
        let back = SliceSet::union_all(shuffled.iter()).unwrap();
        prop_assert_eq!(points(&fwd), points(&back));
        prop_assert_eq!(fwd.union_area(), back.union_area());
    }

    #[test]
    fn projection_matches_points(s in set_strategy()) {
        let p = s.project(&[1, 2]);
        let expected: BTreeSet<Vec<usize>> = points(&s).into_iter().map(|v| vec![v[1], v[2]]).collect();
        prop_assert_eq!(points(&p), expected);
    }

    #[test]
    fn take_window_matches_enumeration(
        s in set_strategy(),
        k in 1usize..4, st in 1usize..3, pad in 0usize..2, dil in 1usize..3,
    ) {
        prop_assume!(!s.is_empty());
        let w = AxisWindow::conv(k, st, pad, dil);
        let windows = [AxisWindow::IDENTITY, w, w];
        let bounds = [IntervalSlice::new(0, 13).unwrap(), IntervalSlice::new(0, 20).unwrap(), IntervalSlice::new(0, 20).unwrap()];
        let mut expected = BTreeSet::new();
        for p in points(&s) {
            for a in 0..w.extent as i64 {
                for b in 0..w.extent as i64 {
                    let r = p[1] as i64 * st as i64 - pad as i64 + a;
                    let c = p[2] as i64 * st as i64 - pad as i64 + b;
                    if (0..=20).contains(&r) && (0..=20).contains(&c) {
                        expected.insert(vec![p[0], r as usize, c as usize]);
                    }
                }
            }
        }
        match s.take_window(&windows, &bounds) {
            Ok(t) => prop_assert_eq!(points(&t), expected),
            Err(_) => prop_assert!(expected.is_empty()),
        }
    }

    #[test]
    fn json_round_trip(s in set_strategy()) {
        let text = serde_json::to_string(&s).unwrap();
        let back: SliceSet = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, s);
    }
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let a = SliceSet::from_rect(HyperRect::from_bounds(&[(0, 1), (0, 1)]));
    let b = SliceSet::from_rect(HyperRect::from_bounds(&[(0, 1)]));
    assert!(a.union(&b).is_err());
    assert!(IntervalSlice::new(3, 2).is_err());
}
